"""Monte Carlo engine: the exact double cascade on realised networks.

A realisation fixes the skeleton, both buffers of every bank and every
exposure.  ``run_cascade`` iterates the synchronous update to its fixed point;
``monte_carlo`` repeats that over independently drawn realisations and sweep
points, reusing each trial's network across the sweep (common random numbers).

Trial ``t`` of a run with master seed ``s`` draws everything from
``SeedSequence([s, t])``, split into a topology, a balance-sheet and a seeding
stream.  Results therefore do not depend on how trials are spread over
worker processes.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Sequence

import numpy as np

from . import _kernels
from .ensemble import BoundLaws, Ensemble
from .netgen import NodeTypeLaw, Skeleton, configuration_skeleton, poisson_skeleton, preferential_attachment
from .netgen import top_connected_subnetwork

log = logging.getLogger(__name__)


class Status(IntEnum):
    NORMAL = 0
    STRESSED = 1
    DEFAULTED = 2


class CascadeOverflowError(RuntimeError):
    """The cascade did not settle within its step bound (an implementation bug)."""


@dataclass(frozen=True, eq=False)
class NetworkRealization:
    """A skeleton with concrete buffers and exposures."""

    skeleton: Skeleton
    delta: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        g = self.skeleton
        for name, size in (("delta", g.N), ("sigma", g.N), ("omega", g.L)):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if a.shape != (size,):
                raise ValueError(f"{name} has shape {a.shape}, expected ({size},)")
            object.__setattr__(self, name, a)
        if np.any(self.delta < 0) or np.any(self.sigma < 0):
            raise ValueError("buffers must be non-negative")
        if np.any(~(self.omega > 0)):
            raise ValueError("exposures must be positive")

    @property
    def N(self) -> int:
        return self.skeleton.N

    def scaled(self, delta_factor: float = 1.0, sigma_factor: float = 1.0) -> "NetworkRealization":
        return replace(self, delta=self.delta * delta_factor, sigma=self.sigma * sigma_factor)

    def with_defaults(self, nodes) -> "NetworkRealization":
        """Copy with the given nodes defaulted on day 0."""
        delta = self.delta.copy()
        delta[np.asarray(nodes, dtype=np.int64)] = 0.0
        return replace(self, delta=delta)


@dataclass(frozen=True, eq=False)
class CascadeState:
    """Step-n snapshot.  ``S`` is the breached-stress-buffer set and includes defaulted banks."""

    step: int
    D: np.ndarray
    S: np.ndarray
    default_step: np.ndarray
    stress_step: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray

    @property
    def status(self) -> np.ndarray:
        st = np.full(self.D.size, Status.NORMAL, dtype=np.int8)
        st[self.S] = Status.STRESSED
        st[self.D] = Status.DEFAULTED
        return st

    @classmethod
    def initial(cls, real: NetworkRealization, lam: float) -> "CascadeState":
        g = real.skeleton
        D = real.delta <= 0.0
        S = real.sigma <= 0.0
        return cls(
            0,
            D,
            S,
            np.where(D, 0, -1),
            np.where(S & ~D, 0, -1),
            D[g.src].astype(float),
            np.where(D[g.dst], 1.0, np.where(S[g.dst], lam, 0.0)),
        )


def cascade_step(state: CascadeState, real: NetworkRealization, lam: float) -> CascadeState:
    """Advance one synchronous step.  Returns ``state`` itself at the fixed point."""
    g = real.skeleton
    D, S, xi, zeta = _kernels.step_numpy(
        state.D, state.S, state.xi, state.zeta, real.delta, real.sigma, g.src, g.dst, real.omega, lam
    )
    if (
        np.array_equal(D, state.D)
        and np.array_equal(S, state.S)
        and np.array_equal(xi, state.xi)
        and np.array_equal(zeta, state.zeta)
    ):
        return state
    n = state.step + 1
    ds = state.default_step.copy()
    ds[D & ~state.D] = n
    ss = state.stress_step.copy()
    ss[S & ~D & (ss < 0)] = n
    return CascadeState(n, D, S, ds, ss, xi, zeta)


@dataclass(frozen=True, eq=False)
class CascadeReport:
    steps_taken: int
    default_frac: float
    stress_frac: float
    traj_default: np.ndarray  # fraction defaulted after each step 0..steps_taken
    traj_stress: np.ndarray
    status: np.ndarray
    default_step: np.ndarray
    stress_step: np.ndarray
    xi: np.ndarray = field(repr=False)
    zeta: np.ndarray = field(repr=False)

    @property
    def normal_frac(self) -> float:
        return 1.0 - self.default_frac - self.stress_frac


def step_bound(N: int) -> int:
    # hard guard only; the status sets settle within 2N steps
    return 4 * N + 4


def run_cascade(real: NetworkRealization, lam: float, seed_defaults=None) -> CascadeReport:
    """Iterate the double cascade to its fixed point.

    ``seed_defaults`` optionally lists nodes to default on day 0 on top of the
    ``delta == 0`` atoms.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if seed_defaults is not None:
        real = real.with_defaults(seed_defaults)
    g = real.skeleton
    N = g.N
    D, S, dstep, sstep, td, ts, n, xi, zeta = _kernels.cascade(
        real.delta, real.sigma, g.src, g.dst, real.omega, lam, step_bound(N)
    )
    if n < 0:
        raise CascadeOverflowError(f"no fixed point after {step_bound(N)} steps (N={N})")
    status = np.full(N, Status.NORMAL, dtype=np.int8)
    status[S] = Status.STRESSED
    status[D] = Status.DEFAULTED
    denom = max(N, 1)
    nd = int(D.sum())
    ns = int((S & ~D).sum())
    return CascadeReport(
        steps_taken=int(n),
        default_frac=nd / denom,
        stress_frac=ns / denom,
        traj_default=td[: n + 1] / denom,
        traj_stress=ts[: n + 1] / denom,
        status=status,
        default_step=dstep,
        stress_step=sstep,
        xi=xi,
        zeta=zeta,
    )


def realize_network(skeleton: Skeleton, laws: Ensemble | BoundLaws, seed) -> NetworkRealization:
    """Draw buffers and exposures for ``skeleton``, independently given its types."""
    bound = laws.bind(skeleton) if isinstance(laws, Ensemble) else laws
    if bound.skeleton is not skeleton and (bound.skeleton.N, bound.skeleton.L) != (skeleton.N, skeleton.L):
        raise ValueError("laws are bound to a different skeleton")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    delta, sigma, omega = bound.draw(rng)
    return NetworkRealization(skeleton, delta, sigma, omega)


# --------------------------------------------------------------------------
# skeleton sources


@dataclass(frozen=True)
class PoissonSource:
    N: int
    z: float
    fixed = False

    def draw(self, seed) -> Skeleton:
        return poisson_skeleton(self.N, self.z, seed)


@dataclass(frozen=True, eq=False)
class ConfigurationSource:
    P: NodeTypeLaw
    N: int
    fixed = False

    def draw(self, seed) -> Skeleton:
        return configuration_skeleton(self.P, self.N, seed)


@dataclass(frozen=True)
class PASource:
    """Top-``keep`` banks of a grown preferential-attachment graph."""

    grow: int
    keep: int
    alpha: float
    gamma: float
    delta_in: float
    delta_out: float
    fixed = False

    def draw(self, seed) -> Skeleton:
        big = preferential_attachment(self.grow, self.alpha, self.gamma, self.delta_in, self.delta_out, seed)
        return top_connected_subnetwork(big, self.keep)[0]


@dataclass(frozen=True, eq=False)
class FixedSource:
    skeleton: Skeleton
    fixed = True

    def draw(self, seed=None) -> Skeleton:
        return self.skeleton


# --------------------------------------------------------------------------
# ensembles of trials


@dataclass(frozen=True)
class SweepPoint:
    """One point of a sweep: lambda and multiplicative buffer factors."""

    lam: float
    delta_factor: float = 1.0
    sigma_factor: float = 1.0


def trial_streams(master_seed: int, t: int) -> tuple[np.random.Generator, ...]:
    """(topology, balance sheet, seeding) generators of trial ``t``."""
    ss = np.random.SeedSequence([int(master_seed), int(t)])
    return tuple(np.random.default_rng(c) for c in ss.spawn(3))


def _run_trials(args):
    source, laws, points, seeding, master_seed, trials, fixed_bound = args
    P = len(points)
    out_d = np.empty((len(trials), P))
    out_s = np.empty((len(trials), P))
    out_n = np.empty((len(trials), P), dtype=np.int64)
    trajs = []
    for i, t in enumerate(trials):
        topo, sheet, seeding_rng = trial_streams(master_seed, t)
        if source.fixed:
            g = source.draw()
            bound = fixed_bound
        else:
            g = source.draw(topo)
            bound = laws.bind(g) if isinstance(laws, Ensemble) else laws
        real = realize_network(g, bound, sheet)
        seeds = None
        if seeding == "single":
            seeds = [int(seeding_rng.integers(g.N))]
        row = []
        for p, pt in enumerate(points):
            r = real if (pt.delta_factor, pt.sigma_factor) == (1.0, 1.0) else real.scaled(pt.delta_factor, pt.sigma_factor)
            rep = run_cascade(r, pt.lam, seeds)
            out_d[i, p] = rep.default_frac
            out_s[i, p] = rep.stress_frac
            out_n[i, p] = rep.steps_taken
            row.append((rep.traj_default, rep.traj_stress))
        trajs.append(row)
    return trials, out_d, out_s, out_n, trajs


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    points: tuple[SweepPoint, ...]
    default_frac: np.ndarray  # (trials, points)
    stress_frac: np.ndarray
    steps: np.ndarray
    mean_traj_default: tuple[np.ndarray, ...]  # per point, mean fraction after each step
    mean_traj_stress: tuple[np.ndarray, ...]

    @property
    def trials(self) -> int:
        return self.default_frac.shape[0]

    def aggregate(self) -> dict[str, np.ndarray]:
        """Mean and 10th/90th percentiles per sweep point."""
        d, s = self.default_frac, self.stress_frac
        return {
            "mean_default": d.mean(axis=0),
            "p10_default": np.percentile(d, 10, axis=0),
            "p90_default": np.percentile(d, 90, axis=0),
            "mean_stress": s.mean(axis=0),
            "p10_stress": np.percentile(s, 10, axis=0),
            "p90_stress": np.percentile(s, 90, axis=0),
        }


def _mean_padded(series: list[np.ndarray]) -> np.ndarray:
    # trajectories stay at their final value after they stop
    n = max(len(x) for x in series)
    acc = np.zeros(n)
    for x in series:
        acc[: len(x)] += x
        acc[len(x) :] += x[-1]
    return acc / len(series)


def monte_carlo(
    source,
    laws: Ensemble | BoundLaws,
    points: Sequence[SweepPoint | float],
    trials: int,
    master_seed: int,
    seeding: str = "atoms",
    workers: int = 1,
) -> MonteCarloResult:
    """Run ``trials`` independent realisations through every sweep point.

    ``seeding="atoms"`` takes day-0 defaults from the buffer atoms only;
    ``"single"`` additionally defaults one uniformly chosen bank per trial.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if seeding not in ("atoms", "single"):
        raise ValueError(f"unknown seeding {seeding!r}")
    pts = tuple(p if isinstance(p, SweepPoint) else SweepPoint(float(p)) for p in points)
    if not pts:
        raise ValueError("no sweep points")
    fixed_bound = None
    if source.fixed:
        g = source.draw()
        fixed_bound = laws.bind(g) if isinstance(laws, Ensemble) else laws
    ids = np.arange(trials)
    workers = max(1, min(int(workers), trials))
    if workers == 1:
        parts = [_run_trials((source, laws, pts, seeding, master_seed, ids, fixed_bound))]
    else:
        chunks = np.array_split(ids, workers * 4)
        jobs = [(source, laws, pts, seeding, master_seed, c, fixed_bound) for c in chunks if c.size]
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as ex:
            parts = list(ex.map(_run_trials, jobs))
    parts.sort(key=lambda r: int(r[0][0]))
    d = np.concatenate([p[1] for p in parts])
    s = np.concatenate([p[2] for p in parts])
    n = np.concatenate([p[3] for p in parts])
    trajs = [row for p in parts for row in p[4]]
    mtd = tuple(_mean_padded([trajs[t][k][0] for t in range(trials)]) for k in range(len(pts)))
    mts = tuple(_mean_padded([trajs[t][k][1] for t in range(trials)]) for k in range(len(pts)))
    return MonteCarloResult(pts, d, s, n, mtd, mts)
