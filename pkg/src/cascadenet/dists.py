"""Grid-discretised distributions and their convolution algebra.

All monetary quantities of one computation live on a common grid
``x_i = i * h`` for ``i = 0 .. M-1`` with ``M`` a power of two.  Cell 0 holds
the point mass at zero.

Two convolution regimes are provided:

* circular (``convolve``, ``conv_power``): plain FFT products on ``M`` cells.
  Wrap-around ("aliasing") is measured and rejected above a tolerance.
* capped (``capped_convolve``, ``capped_power``): linear convolution where
  every bit of mass at or beyond cell ``M-1`` is pooled in the top cell.  The
  top cell therefore means "at least (M-1)h".  This is exact for threshold
  probabilities against buffers that lie below the top cell, whatever the tail
  of the shocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

log = logging.getLogger(__name__)

ALIAS_TOL = 1e-9
TAIL_TOL = 1e-6


class GridError(ValueError):
    """Operands do not share a grid, or a grid is malformed."""


class AliasingError(ArithmeticError):
    """Circular convolution wrapped more mass than tolerated."""

    def __init__(self, wrapped: float, tol: float, what: str = "convolution"):
        self.wrapped = float(wrapped)
        self.tol = tol
        super().__init__(f"{what}: wrapped mass {wrapped:.3e} exceeds {tol:.1e}; enlarge M or grid_step")


def _is_pow2(m: int) -> bool:
    return m > 0 and (m & (m - 1)) == 0


@dataclass(frozen=True)
class GridPmf:
    """Non-negative masses on cells ``0 .. M-1`` of a grid with step ``grid_step``."""

    grid_step: float
    masses: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.ascontiguousarray(self.masses, dtype=np.float64)
        if m.ndim != 1:
            raise GridError("masses must be one-dimensional")
        if not _is_pow2(m.size):
            raise GridError(f"cell count {m.size} is not a power of two")
        if not self.grid_step > 0:
            raise GridError("grid_step must be positive")
        if np.any(m < -1e-12) or not np.all(np.isfinite(m)):
            raise ValueError("masses must be finite and non-negative")
        m = np.maximum(m, 0.0)
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def M(self) -> int:
        return self.masses.size

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def mean(self) -> float:
        return float(np.dot(np.arange(self.M), self.masses)) * self.grid_step

    def std(self) -> float:
        x = np.arange(self.M) * self.grid_step
        tot = self.total
        mu = float(np.dot(x, self.masses)) / tot
        return float(np.sqrt(max(np.dot((x - mu) ** 2, self.masses) / tot, 0.0)))

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.masses)

    def check_total(self, expected: float = 1.0, tol: float = 1e-9) -> None:
        if abs(self.total - expected) > tol:
            raise ValueError(f"total mass {self.total!r} differs from {expected!r}")

    @classmethod
    def delta0(cls, grid_step: float, M: int, mass: float = 1.0) -> "GridPmf":
        m = np.zeros(M)
        m[0] = mass
        return cls(grid_step, m)

    @classmethod
    def from_cells(cls, grid_step: float, M: int, cells: dict[int, float]) -> "GridPmf":
        m = np.zeros(M)
        for i, p in cells.items():
            m[i] += p
        return cls(grid_step, m)


def _same_grid(a: GridPmf, b: GridPmf) -> None:
    if a.M != b.M or not np.isclose(a.grid_step, b.grid_step, rtol=1e-12, atol=0.0):
        raise GridError(f"grid mismatch: (h={a.grid_step}, M={a.M}) vs (h={b.grid_step}, M={b.M})")


# --------------------------------------------------------------------------
# construction


def lognormal_params(mean, std):
    """Underlying normal (mu, sigma) of a log-normal with the given mean/std."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    sigma2 = np.log1p((std / mean) ** 2)
    return np.log(mean) - 0.5 * sigma2, np.sqrt(sigma2)


def point_mass(value: float, grid_step: float, M: int) -> GridPmf:
    """Unit mass at ``value``; split linearly between cells if off-grid."""
    pos = value / grid_step
    if pos < 0 or pos > M - 1:
        raise GridError(f"value {value} outside grid [0, {(M - 1) * grid_step}]")
    lo = int(np.floor(pos + 1e-9))
    frac = pos - lo
    m = np.zeros(M)
    if frac < 1e-9 or lo == M - 1:
        m[lo] = 1.0
    else:
        m[lo] = 1.0 - frac
        m[lo + 1] = frac
    return GridPmf(grid_step, m)


def discretize_lognormal(
    mean: float,
    std: float,
    grid_step: float,
    M: int,
    tail_tol: float | None = TAIL_TOL,
    return_tail: bool = False,
):
    """Cell masses of a log-normal law: cell ``i`` gets P((i-1/2)h < X <= (i+1/2)h].

    Mass beyond ``(M - 1/2)h`` is folded into the last cell.  If it exceeds
    ``tail_tol`` an :class:`AliasingError` is raised (pass ``tail_tol=None`` to
    only log it).  ``std == 0`` gives a point mass at ``mean``.
    """
    if not (np.isfinite(mean) and mean > 0 and np.isfinite(std) and std >= 0):
        raise ValueError(f"need finite mean > 0 and std >= 0, got {mean}, {std}")
    if not _is_pow2(M):
        raise GridError(f"cell count {M} is not a power of two")
    if std == 0:
        pmf = point_mass(min(mean, (M - 1) * grid_step), grid_step, M)
        tail = 1.0 if mean > (M - 0.5) * grid_step else 0.0
    else:
        mu, sig = lognormal_params(mean, std)
        edges = (np.arange(M + 1) - 0.5) * grid_step
        edges[0] = 0.0
        with np.errstate(divide="ignore"):
            z = (np.log(edges) - mu) / sig
        # survival form keeps the upper tail accurate
        surv = ndtr(-z)
        surv[0] = 1.0
        masses = surv[:-1] - surv[1:]
        tail = float(surv[-1])
        masses[-1] += tail
        pmf = GridPmf(grid_step, np.maximum(masses, 0.0))
    if tail > 0:
        if tail_tol is not None and tail > tail_tol:
            raise AliasingError(tail, tail_tol, "log-normal tail beyond grid")
        log.debug("log-normal(%g, %g): folded tail mass %.3e into last cell", mean, std, tail)
    return (pmf, tail) if return_tail else pmf


# --------------------------------------------------------------------------
# transforms


def fft(values) -> np.ndarray:
    """Forward DFT with kernel exp(-2 pi i k l / M)."""
    a = np.asarray(values)
    if not _is_pow2(a.shape[-1]):
        raise GridError("length must be a power of two")
    return np.fft.fft(a)


def ifft(values) -> np.ndarray:
    """Inverse of :func:`fft` (carries the 1/M factor)."""
    a = np.asarray(values)
    if not _is_pow2(a.shape[-1]):
        raise GridError("length must be a power of two")
    return np.fft.ifft(a)


def inner(a, b) -> complex:
    """Hermitian inner product sum(conj(a) * b)."""
    return complex(np.vdot(np.asarray(a), np.asarray(b)))


def direct_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """O(M^2) linear convolution truncated to len(a) cells (reference oracle)."""
    return np.convolve(a, b)[: len(a)]


# --------------------------------------------------------------------------
# circular algebra


def _wrapped_mass(a: np.ndarray, b: np.ndarray) -> float:
    # mass of pairs (m, n) with m + n >= M
    M = a.size
    tail_b = np.cumsum(b[::-1])[::-1]  # tail_b[t] = sum_{n >= t} b[n]
    idx = M - np.arange(1, M)  # for m >= 1 need n >= M - m
    return float(np.dot(a[1:], tail_b[idx]))


def _first_moment(x: np.ndarray) -> np.ndarray:
    return x @ np.arange(x.shape[-1], dtype=float)


def convolve(a: GridPmf, b: GridPmf, alias_tol: float = ALIAS_TOL) -> GridPmf:
    """Distribution of the sum of independent draws from ``a`` and ``b``."""
    _same_grid(a, b)
    wrapped = _wrapped_mass(a.masses, b.masses)
    if wrapped > alias_tol:
        raise AliasingError(wrapped, alias_tol)
    out = np.fft.irfft(np.fft.rfft(a.masses) * np.fft.rfft(b.masses), n=a.M)
    return GridPmf(a.grid_step, np.clip(out, 0.0, None))


def conv_power(a: GridPmf, n: int, alias_tol: float = ALIAS_TOL) -> GridPmf:
    """``n``-fold convolution power, formed as a componentwise power of the transform."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return GridPmf.delta0(a.grid_step, a.M)
    if n == 1:
        return a
    out = np.clip(np.fft.irfft(np.fft.rfft(a.masses) ** n, n=a.M), 0.0, None)
    wrapped = power_wrap_estimate(a.masses, out, n)
    if wrapped > alias_tol:
        raise AliasingError(wrapped, alias_tol, f"convolution power {n}")
    return GridPmf(a.grid_step, out)


def power_wrap_estimate(base: np.ndarray, result: np.ndarray, n) -> np.ndarray:
    """Wrapped mass of a circular n-th power, from the lost first moment.

    Every unit of mass that wraps once loses exactly M cells of first moment,
    so the deficit over M is the wrapped mass (an over-estimate if mass wraps
    more than once).  Works row-wise on stacked arrays.
    """
    M = base.shape[-1]
    n = np.asarray(n, dtype=float)
    tot = base.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        expected = np.where(n > 0, n * tot ** np.maximum(n - 1, 0) * _first_moment(base), 0.0)
    return np.maximum((expected - _first_moment(result)) / M, 0.0)


def scale_pmf(a: GridPmf, factor: float) -> GridPmf:
    """Law of ``factor * X``; each mass is split linearly over its two bracketing cells.

    ``factor == 0`` collapses everything onto cell 0.
    """
    if not 0 <= factor <= 1:
        raise ValueError("factor must lie in [0, 1]")
    return GridPmf(a.grid_step, scale_masses(a.masses, factor))


def scale_masses(m: np.ndarray, factor: float) -> np.ndarray:
    """Array form of :func:`scale_pmf`, row-wise over leading axes."""
    m = np.asarray(m, dtype=float)
    if factor == 1:
        return m.copy()
    M = m.shape[-1]
    out = np.zeros_like(m)
    if factor == 0:
        out[..., 0] = m.sum(axis=-1)
        return out
    pos = np.arange(M) * factor
    lo = np.floor(pos + 1e-9).astype(np.int64)
    frac = pos - lo
    frac[frac < 1e-9] = 0.0
    hi = np.minimum(lo + 1, M - 1)
    flat = m.reshape(-1, M)
    res = out.reshape(-1, M)
    for r in range(flat.shape[0]):
        res[r] = np.bincount(lo, weights=flat[r] * (1.0 - frac), minlength=M)[:M]
        res[r] += np.bincount(hi, weights=flat[r] * frac, minlength=M)[:M]
    return out


# --------------------------------------------------------------------------
# capped algebra (used by the analytic engines)


def _pad_len(M: int) -> int:
    return 2 * M


def capped_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Linear convolution with all mass at index >= M-1 pooled into cell M-1.

    Broadcasts over leading axes.
    """
    M = a.shape[-1]
    n = _pad_len(M)
    full = np.fft.irfft(np.fft.rfft(a, n) * np.fft.rfft(b, n), n)
    return _cap(full, M)


def _cap(full: np.ndarray, M: int) -> np.ndarray:
    out = np.clip(full[..., :M], 0.0, None)
    out[..., M - 1] = np.clip(full[..., M - 1 :], 0.0, None).sum(axis=-1)
    return out


def capped_power(a: np.ndarray, n) -> np.ndarray:
    """Row-wise capped convolution powers ``a[r] ** n[r]`` by binary exponentiation.

    ``a`` has shape (R, M); ``n`` is a length-R integer array (or a scalar).
    Rows with ``n == 0`` give exactly delta_0.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    R, M = a.shape
    n = np.broadcast_to(np.asarray(n, dtype=np.int64), (R,)).copy()
    if np.any(n < 0):
        raise ValueError("powers must be non-negative")
    result = np.zeros_like(a)
    result[:, 0] = 1.0
    base = a.copy()
    N = _pad_len(M)
    base_hat = np.fft.rfft(base, N)
    while np.any(n > 0):
        odd = (n & 1).astype(bool)
        if odd.any():
            rh = np.fft.rfft(result[odd], N)
            result[odd] = _cap(np.fft.irfft(rh * base_hat[odd], N), M)
        n >>= 1
        live = n > 0
        if live.any():
            base[live] = _cap(np.fft.irfft(base_hat[live] ** 2, N), M)
            base_hat[live] = np.fft.rfft(base[live], N)
    return result


def capped_wrap_power(a: np.ndarray, n) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise circular powers through the transform, plus wrapped-mass estimates."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    R, M = a.shape
    n = np.broadcast_to(np.asarray(n, dtype=np.int64), (R,))
    hat = np.fft.rfft(a, axis=-1)
    out = np.fft.irfft(hat ** n[:, None], M, axis=-1)
    out = np.clip(out, 0.0, None)
    return out, power_wrap_estimate(a, out, n)


# --------------------------------------------------------------------------
# laws


@dataclass(frozen=True)
class BufferLaw:
    """Law of a non-negative buffer: an atom at zero plus mass on positive cells."""

    atom0: float
    density: GridPmf

    def __post_init__(self):
        if not -1e-12 <= self.atom0 <= 1 + 1e-12:
            raise ValueError(f"atom0 {self.atom0} outside [0, 1]")
        if self.density.masses[0] > 1e-12:
            raise ValueError("buffer density must not charge cell 0; use atom0")
        tot = self.atom0 + self.density.total
        if abs(tot - 1.0) > 1e-9:
            raise ValueError(f"atom0 + density mass = {tot!r}, expected 1")

    @property
    def grid_step(self) -> float:
        return self.density.grid_step

    @property
    def M(self) -> int:
        return self.density.M

    def cdf(self) -> np.ndarray:
        """P[buffer <= x_i] for each cell i (atom included)."""
        return self.atom0 + np.cumsum(self.density.masses)

    @classmethod
    def from_values(cls, atom0: float, value: float, grid_step: float, M: int) -> "BufferLaw":
        """Buffer that is 0 with probability ``atom0`` and ``value`` otherwise."""
        d = point_mass(value, grid_step, M).masses * (1.0 - atom0)
        return cls(atom0, GridPmf(grid_step, _lift_cell0(d)))

    @classmethod
    def lognormal(cls, atom0, mean, std, grid_step, M, tail_tol=TAIL_TOL) -> "BufferLaw":
        if atom0 >= 1:
            return cls(1.0, GridPmf(grid_step, np.zeros(M)))
        d = discretize_lognormal(mean, std, grid_step, M, tail_tol=tail_tol).masses
        return cls(atom0, GridPmf(grid_step, _lift_cell0(d * (1.0 - atom0))))


@dataclass(frozen=True)
class ExposureLaw:
    """Law of a strictly positive exposure."""

    density: GridPmf

    def __post_init__(self):
        if self.density.masses[0] >= 1e-12:
            raise ValueError("exposure law charges zero")
        self.density.check_total()

    @classmethod
    def lognormal(cls, mean, std, grid_step, M, tail_tol=TAIL_TOL) -> "ExposureLaw":
        d = discretize_lognormal(mean, std, grid_step, M, tail_tol=tail_tol).masses
        return cls(GridPmf(grid_step, _lift_cell0(d)))


def _lift_cell0(m: np.ndarray) -> np.ndarray:
    # positive values below h/2 are represented one cell up
    m = m.copy()
    if m[0] > 0:
        m[1] += m[0]
        m[0] = 0.0
    return m


def threshold_prob(buffer: BufferLaw, shock: GridPmf, method: str = "direct") -> float:
    """P[shock >= buffer] for independent shock and buffer (ties breach).

    ``method="fft"`` evaluates the same inner product on the transform side
    via Parseval.
    """
    _same_grid(buffer.density, shock)
    cdf = buffer.cdf()
    if method == "direct":
        return float(np.dot(cdf, shock.masses))
    if method == "fft":
        M = shock.M
        return float(np.real(inner(np.fft.fft(cdf), np.fft.fft(shock.masses))) / M)
    raise ValueError(f"unknown method {method!r}")
