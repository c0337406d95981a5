"""Balance-sheet ensembles: which laws buffers and exposures follow.

Every law is log-normal-with-atom, possibly degree dependent.  The same
ensemble object feeds the Monte Carlo realiser and the analytic engines, so
both always see the same model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .netgen import EdgeTypeLaw, Skeleton


@dataclass(frozen=True)
class LawSpec:
    """Log-normal with given mean and std, both scaled by ``j**j_power * k**k_power``.

    ``std == 0`` means the value is deterministic.  Degrees are floored at 1
    inside the scale factor so isolated directions never zero a law.
    For node laws (j, k) are the node's in- and out-degree; for exposure laws
    j is the creditor's in-degree and k the debtor's out-degree.
    """

    mean: float
    std: float = 0.0
    j_power: float = 0.0
    k_power: float = 0.0

    def __post_init__(self):
        if self.mean < 0 or self.std < 0 or (self.mean == 0 and self.std > 0):
            raise ValueError(f"need mean >= 0, std >= 0 (std = 0 if mean = 0), got {self.mean}, {self.std}")

    def factor(self, j, k):
        j = np.maximum(np.asarray(j, dtype=float), 1.0)
        k = np.maximum(np.asarray(k, dtype=float), 1.0)
        return j**self.j_power * k**self.k_power

    def params(self, j, k) -> tuple[np.ndarray, np.ndarray]:
        f = self.factor(j, k)
        return self.mean * f, self.std * f

    def scaled(self, c: float) -> "LawSpec":
        return replace(self, mean=self.mean * c, std=self.std * c)

    @classmethod
    def from_log_params(cls, a: float, b: float, **powers) -> "LawSpec":
        """Law of exp(a + b X), X standard normal."""
        mean = float(np.exp(a + 0.5 * b * b))
        return cls(mean, mean * float(np.sqrt(np.expm1(b * b))), **powers)


def sample_lognormal(rng: np.random.Generator, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    z = rng.standard_normal(mean.shape)
    live = std > 0
    m = np.where(live, mean, 1.0)
    sig2 = np.log1p((np.where(live, std, 0.0) / m) ** 2)
    draw = np.exp(np.log(m) - 0.5 * sig2 + np.sqrt(sig2) * z)
    return np.where(live, draw, mean)


@dataclass(frozen=True, eq=False)
class BoundLaws:
    """Per-node and per-edge law parameters on one skeleton.

    ``q0`` is the probability of being stressed but not defaulted on day 0;
    the stress buffer itself is zero with probability ``q0 / (1 - p0)``,
    independently of the default buffer.
    """

    skeleton: Skeleton
    p0: np.ndarray
    q0: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray
    sigma_mean: np.ndarray
    sigma_std: np.ndarray
    omega_mean: np.ndarray
    omega_std: np.ndarray

    def __post_init__(self):
        N, L = self.skeleton.N, self.skeleton.L
        for name in ("p0", "q0", "delta_mean", "delta_std", "sigma_mean", "sigma_std"):
            a = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (N,)).copy()
            object.__setattr__(self, name, a)
        for name in ("omega_mean", "omega_std"):
            a = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (L,)).copy()
            object.__setattr__(self, name, a)
        if np.any((self.p0 < 0) | (self.p0 > 1) | (self.q0 < 0) | (self.p0 + self.q0 > 1 + 1e-12)):
            raise ValueError("need 0 <= p0, q0 and p0 + q0 <= 1")
        if np.any(self.omega_mean <= 0):
            raise ValueError("exposures must be positive")

    @property
    def stress_atom(self) -> np.ndarray:
        """P[stress buffer = 0] for each node."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.p0 < 1, np.minimum(self.q0 / (1 - self.p0), 1.0), 0.0)

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One draw of (delta, sigma, omega)."""
        N = self.skeleton.N
        d_atom = rng.random(N) < self.p0
        delta = np.where(d_atom, 0.0, sample_lognormal(rng, self.delta_mean, self.delta_std))
        s_atom = rng.random(N) < self.stress_atom
        sigma = np.where(s_atom, 0.0, sample_lognormal(rng, self.sigma_mean, self.sigma_std))
        omega = sample_lognormal(rng, self.omega_mean, self.omega_std)
        return delta, sigma, omega


@dataclass(frozen=True)
class Ensemble:
    """Type-dependent balance-sheet laws.

    ``normalize_omega`` rescales exposures so the average exposure mean over
    the network's edges (or over the edge-type law) equals one.
    """

    delta: LawSpec
    sigma: LawSpec
    omega: LawSpec
    p0: float = 0.0
    q0: float = 0.0
    normalize_omega: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not (0 <= self.p0 <= 1 and 0 <= self.q0 <= 1 - self.p0):
            raise ValueError("need 0 <= p0 <= 1 and 0 <= q0 <= 1 - p0")

    def omega_scale(self, k, j, weights=None) -> float:
        if not self.normalize_omega:
            return 1.0
        m, _ = self.omega.params(j, k)
        return 1.0 / float(np.average(m, weights=weights))

    def omega_scale_for_law(self, Q: EdgeTypeLaw) -> float:
        K = Q.K
        k, j = np.meshgrid(np.arange(K + 1), np.arange(K + 1), indexing="ij")
        return self.omega_scale(k.ravel(), j.ravel(), Q.Q.ravel())

    def bind(self, g: Skeleton) -> BoundLaws:
        j, k = g.in_deg, g.out_deg
        dm, ds = self.delta.params(j, k)
        sm, ss = self.sigma.params(j, k)
        ek, ej = g.edge_types()
        om, osd = self.omega.params(ej, ek)
        if self.normalize_omega and g.L:
            c = self.omega_scale(ek, ej)
            om, osd = om * c, osd * c
        return BoundLaws(g, self.p0, self.q0, dm, ds, sm, ss, om, osd)

    def with_buffers_scaled(self, delta_factor: float = 1.0, sigma_factor: float = 1.0) -> "Ensemble":
        return replace(self, delta=self.delta.scaled(delta_factor), sigma=self.sigma.scaled(sigma_factor))
