"""Analytic double cascade on a known skeleton with random balance sheets.

The recursion tracks per-node probabilities (default, stress-buffer breach,
stress) and per-edge probabilities (creditor default without regarding the
debtor, full-size default shock).  Edge ``e`` points from debtor ``src[e]``
to creditor ``dst[e]``.

Convolutions over a node's neighbours are formed position by position across
all nodes at once.  Leave-one-out products come from prefix and suffix
products, so a hub costs O(degree) rather than O(degree^2).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cascade_lti import MODES, buffer_row, exposure_row, _lognormal_scaled_row
from .dists import ALIAS_TOL, AliasingError, BufferLaw, ExposureLaw, GridError, scale_masses
from .ensemble import BoundLaws
from .netgen import Skeleton

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FixedLtiModel:
    """Per-node cumulative buffer laws and per-edge exposure densities on one grid."""

    skeleton: Skeleton
    lam: float
    grid_step: float
    d_atom: np.ndarray  # (N,)
    s_atom: np.ndarray  # (N,)
    d_cdf: np.ndarray  # (N, M)
    s_cdf: np.ndarray  # (N, M)
    w: np.ndarray  # (L, M)
    w_g: np.ndarray  # (L, M) scaled by 1 - lambda
    w_h: np.ndarray  # (L, M) scaled by lambda
    mode: str = "cap"
    alias_tol: float = ALIAS_TOL

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        g = self.skeleton
        shapes = {
            "d_atom": (g.N,),
            "s_atom": (g.N,),
            "d_cdf": (g.N, self.M),
            "s_cdf": (g.N, self.M),
            "w": (g.L, self.M),
            "w_g": (g.L, self.M),
            "w_h": (g.L, self.M),
        }
        for name, shape in shapes.items():
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != shape:
                raise GridError(f"{name} has shape {a.shape}, expected {shape}")
            object.__setattr__(self, name, a)

    @property
    def M(self) -> int:
        return np.asarray(self.d_cdf).shape[1]

    def transforms(self, alg) -> tuple[np.ndarray, np.ndarray]:
        """Cached conjugate transforms of the buffer laws."""
        key = (alg.mode, alg.n)
        cache = self.__dict__.setdefault("_hat_cache", {})
        if key not in cache:
            cache[key] = (alg.cdf_hat(self.d_cdf), alg.cdf_hat(self.s_cdf))
        return cache[key]

    @property
    def N(self) -> int:
        return self.skeleton.N

    @classmethod
    def from_laws(
        cls,
        skeleton: Skeleton,
        default_laws: list[BufferLaw],
        stress_laws: list[BufferLaw],
        exposure_laws: list[ExposureLaw],
        lam: float,
        mode: str = "cap",
    ) -> "FixedLtiModel":
        """Build from explicit grid laws; scaled exposures come from moving grid mass."""
        if len(default_laws) != skeleton.N or len(stress_laws) != skeleton.N or len(exposure_laws) != skeleton.L:
            raise ValueError("need one buffer law pair per node and one exposure law per edge")
        h = default_laws[0].grid_step if default_laws else exposure_laws[0].density.grid_step
        M = default_laws[0].M if default_laws else exposure_laws[0].density.M
        w = np.array([x.density.masses for x in exposure_laws]).reshape(skeleton.L, M)
        return cls(
            skeleton,
            float(lam),
            h,
            np.array([x.atom0 for x in default_laws]),
            np.array([x.atom0 for x in stress_laws]),
            np.array([x.cdf() for x in default_laws]).reshape(skeleton.N, M),
            np.array([x.cdf() for x in stress_laws]).reshape(skeleton.N, M),
            w,
            scale_masses(w, 1.0 - lam),
            scale_masses(w, lam),
            mode=mode,
        )

    @classmethod
    def from_bound(
        cls,
        bound: BoundLaws,
        lam: float,
        grid_step: float,
        M: int,
        mode: str = "cap",
        buffer_tail_tol: float | None = 1e-6,
        exposure_tail_tol: float | None = 1e-6,
    ) -> "FixedLtiModel":
        """Discretise per-node / per-edge log-normal-with-atom laws."""
        if mode == "cap":
            exposure_tail_tol = None
        g = bound.skeleton
        d_atom = np.where(bound.delta_mean == 0, 1.0, bound.p0)
        s_atom = np.where(bound.sigma_mean == 0, 1.0, bound.stress_atom)
        d_cdf = np.array(
            [buffer_row(d_atom[v], bound.delta_mean[v], bound.delta_std[v], grid_step, M, buffer_tail_tol) for v in range(g.N)]
        ).reshape(g.N, M)
        s_cdf = np.array(
            [buffer_row(s_atom[v], bound.sigma_mean[v], bound.sigma_std[v], grid_step, M, buffer_tail_tol) for v in range(g.N)]
        ).reshape(g.N, M)
        # exposure laws usually repeat across edges of the same type: discretise each once
        ms, inv = np.unique(np.column_stack([bound.omega_mean, bound.omega_std]), axis=0, return_inverse=True)
        inv = inv.reshape(-1)

        def rows(make):
            return np.array([make(m, s) for m, s in ms]).reshape(len(ms), M)[inv]

        w = rows(lambda m, s: exposure_row(m, s, grid_step, M, exposure_tail_tol))
        w_g = rows(lambda m, s: _lognormal_scaled_row(m, s, 1.0 - lam, grid_step, M, exposure_tail_tol))
        w_h = rows(lambda m, s: _lognormal_scaled_row(m, s, lam, grid_step, M, exposure_tail_tol))
        return cls(g, float(lam), grid_step, d_atom, s_atom, d_cdf, s_cdf, w, w_g, w_h, mode=mode)


@dataclass(frozen=True, eq=False)
class FixedLtiState:
    n: int
    p: np.ndarray  # (N,)
    q: np.ndarray  # (N,)
    qh: np.ndarray  # (N,)
    pt: np.ndarray  # (L,)  P[dst[e] defaulted without regarding src[e]]
    t: np.ndarray  # (L,)  P[xi_e = 1]

    def tables(self):
        return self.p, self.q, self.qh, self.pt, self.t


def fixed_init_state(model: FixedLtiModel) -> FixedLtiState:
    g = model.skeleton
    p0 = model.d_atom.copy()
    qh0 = model.s_atom.copy()
    return FixedLtiState(0, p0, qh0 * (1.0 - p0), qh0, p0[g.dst].copy(), p0[g.src].copy())


# --------------------------------------------------------------------------
# grouped products


class _Algebra:
    """Products of distributions in one regime, carried in transform space."""

    def __init__(self, M: int, mode: str):
        self.M = M
        self.mode = mode
        self.n = M if mode == "wrap" else 2 * M
        # Parseval weights of the half spectrum
        self.wt = np.full(self.n // 2 + 1, 2.0)
        self.wt[0] = 1.0
        self.wt[-1] = 1.0

    def hat(self, rows: np.ndarray) -> np.ndarray:
        return np.fft.rfft(rows, self.n, axis=-1)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.mode == "wrap":
            return a * b
        full = np.fft.irfft(a * b, self.n, axis=-1)
        out = np.clip(full[..., : self.M], 0.0, None)
        out[..., -1] = np.clip(full[..., self.M - 1 :], 0.0, None).sum(axis=-1)
        return np.fft.rfft(out, self.n, axis=-1)

    def real(self, h: np.ndarray) -> np.ndarray:
        return np.clip(np.fft.irfft(h, self.n, axis=-1)[..., : self.M], 0.0, None)

    def unit(self, rows: int) -> np.ndarray:
        return np.ones((rows, self.n // 2 + 1), dtype=complex)

    def cdf_hat(self, cdf: np.ndarray) -> np.ndarray:
        """Transform of a cumulative law, extended flat past the top cell in "cap" mode
        so that a linear product of two capped factors is read as capped."""
        if self.mode == "cap":
            cdf = np.concatenate([cdf, np.repeat(cdf[..., -1:], self.M, axis=-1)], axis=-1)
        return np.conj(np.fft.rfft(cdf, self.n, axis=-1))

    def score(self, c_hat: np.ndarray, *factors: np.ndarray) -> np.ndarray:
        """Row-wise sum_x cdf(x) (product of factors)(x), evaluated on the transform side."""
        prod = c_hat
        for f in factors:
            prod = prod * f
        return (prod.real @ self.wt) / self.n


def grouped_scores(
    rows: np.ndarray,
    ptr: np.ndarray,
    order: np.ndarray,
    alg: _Algebra,
    c_hat: np.ndarray,
    leave_one_out: bool,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Threshold probabilities of neighbour sums.

    For node v with group edges E_v: ``full[v] = <cdf_v, conv_{e in E_v} rows[e]>``.
    With ``leave_one_out``, ``loo[e] = <cdf_v, conv_{E_v without e} rows>`` for
    each e in E_v.  Also returns the transformed full products.
    """
    N = ptr.size - 1
    deg = np.diff(ptr)
    dmax = int(deg.max()) if deg.size else 0
    hats = alg.hat(rows)
    # prefix[i] = product over slots 0 .. i-1, capped.  A node's last factor
    # is multiplied in without capping: the linear product of two capped
    # factors still fits the padded length and is only ever scored.
    cur = alg.unit(N)
    prefix = []  # prefix[i]: snapshot of cur for nodes with deg > i
    for i in range(dmax):
        live = np.flatnonzero(deg > i)
        e = order[ptr[live] + i]
        if leave_one_out:
            prefix.append(cur[live])
        if i == 0:
            cur[live] = hats[e]
        else:
            last = deg[live] == i + 1
            cur[live[last]] = cur[live[last]] * hats[e[last]]
            mid = ~last
            if mid.any():
                cur[live[mid]] = alg.mul(cur[live[mid]], hats[e[mid]])
    top = cur
    full = alg.score(c_hat, top)
    if not leave_one_out:
        return full, None, top
    loo = np.empty(rows.shape[0])
    suffix = alg.unit(N)  # product over slots i+1 .. deg-1, capped
    for i in range(dmax - 1, -1, -1):
        live = np.flatnonzero(deg > i)
        e = order[ptr[live] + i]
        loo[e] = alg.score(c_hat[live], prefix[i], suffix[live])
        if i == 0:
            break
        last = deg[live] == i + 1
        suffix[live[last]] = hats[e[last]]
        mid = ~last
        if mid.any():
            suffix[live[mid]] = alg.mul(suffix[live[mid]], hats[e[mid]])
    return full, loo, top


def _wrap_guard(rows: np.ndarray, top: np.ndarray, ptr: np.ndarray, order: np.ndarray, alg: _Algebra, tol: float):
    # a product of unit-mass laws keeps the sum of first moments unless it wraps
    M = rows.shape[1]
    if rows.shape[0] == 0:
        return
    mom = rows @ np.arange(M, dtype=float)
    node_of = np.repeat(np.arange(ptr.size - 1), np.diff(ptr))
    expected = np.bincount(node_of, weights=mom[order], minlength=ptr.size - 1)
    lost = (expected - alg.real(top) @ np.arange(M, dtype=float)) / M
    if lost.max() > tol:
        raise AliasingError(lost.max(), tol, "neighbour product")


def fixed_lti_step(state: FixedLtiState, model: FixedLtiModel) -> FixedLtiState:
    g = model.skeleton
    src, dst = g.src, g.dst
    alg = _Algebra(model.M, model.mode)
    ps = state.p[src]
    # per-edge mixtures
    w_zero = 1.0 - ps
    if np.any(ps - state.t < -1e-12):
        raise ValueError("negative mixture weight (t exceeds p upstream)")
    gmix = state.t[:, None] * model.w + (ps - state.t)[:, None] * model.w_g
    gmix[:, 0] += w_zero
    qd = state.qh[dst]
    hmix = state.pt[:, None] * model.w + (qd * (1.0 - state.pt))[:, None] * model.w_h
    hmix[:, 0] += (1.0 - qd) * (1.0 - state.pt)
    gtmix = ps[:, None] * model.w
    gtmix[:, 0] += w_zero

    d_hat, s_hat = model.transforms(alg)
    in_ptr, in_order = g.in_edges
    out_ptr, out_order = g.out_edges
    p, pt_raw, G = grouped_scores(gmix, in_ptr, in_order, alg, d_hat, True)
    qh, _, H = grouped_scores(hmix, out_ptr, out_order, alg, s_hat, False)
    undiminished, _, GT = grouped_scores(gtmix, in_ptr, in_order, alg, d_hat, False)
    if model.mode == "wrap":
        _wrap_guard(gmix, G, in_ptr, in_order, alg, model.alias_tol)
        _wrap_guard(hmix, H, out_ptr, out_order, alg, model.alias_tol)
        _wrap_guard(gtmix, GT, in_ptr, in_order, alg, model.alias_tol)
    p = np.clip(p, 0.0, 1.0)
    qh = np.clip(qh, 0.0, 1.0)
    undiminished = np.clip(undiminished, 0.0, 1.0)
    pt = np.clip(pt_raw, 0.0, 1.0) if g.L else np.zeros(0)
    q = np.clip(1.0 - p - (1.0 - qh) * (1.0 - undiminished), 0.0, None)
    q = np.minimum(q, 1.0 - p)
    t = state.t + (p[src] - ps) * (1.0 - qd)
    t = np.clip(t, 0.0, p[src])
    return FixedLtiState(state.n + 1, p, q, qh, pt, t)


@dataclass(frozen=True, eq=False)
class FixedLtiResult:
    state: FixedLtiState
    iterations: int
    converged: bool

    @property
    def p(self) -> np.ndarray:
        return self.state.p

    @property
    def q(self) -> np.ndarray:
        return self.state.q

    @property
    def expected_defaults(self) -> float:
        return float(self.state.p.sum())

    @property
    def expected_stressed(self) -> float:
        return float(self.state.q.sum())

    @property
    def default_frac(self) -> float:
        return self.expected_defaults / max(self.state.p.size, 1)

    @property
    def stress_frac(self) -> float:
        return self.expected_stressed / max(self.state.p.size, 1)


def fixed_lti_run(model: FixedLtiModel, tol: float = 1e-8, max_iter: int = 500) -> FixedLtiResult:
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = fixed_init_state(model)
    converged = False
    it = 0
    while it < max_iter:
        new = fixed_lti_step(state, model)
        it += 1
        change = max((float(np.max(np.abs(a - b))) if a.size else 0.0) for a, b in zip(new.tables(), state.tables()))
        state = new
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("fixed-skeleton LTI stopped after %d steps without reaching tol=%g", it, tol)
    return FixedLtiResult(state, it, converged)


# --------------------------------------------------------------------------
# law files

NODE_COLUMNS = ("v", "p0", "q0", "delta_mean", "delta_std", "sigma_mean", "sigma_std")
EDGE_COLUMNS = ("v", "w", "omega_mean", "omega_std")


class LawFileError(ValueError):
    pass


def _read_csv(path, columns):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != list(columns):
            raise LawFileError(f"{path}: expected columns {', '.join(columns)}, got {reader.fieldnames}")
        rows = []
        for i, rec in enumerate(reader, start=2):
            try:
                rows.append([float(rec[c]) for c in reader.fieldnames])
            except (TypeError, ValueError) as exc:
                raise LawFileError(f"{path}:{i}: {exc}") from None
    return np.array(rows, dtype=float).reshape(-1, len(columns))


def read_bound_laws(skeleton: Skeleton, node_csv, edge_csv) -> BoundLaws:
    """Per-node and per-edge log-normal-with-atom parameters from the two law files."""
    nodes = _read_csv(node_csv, NODE_COLUMNS)
    edges = _read_csv(edge_csv, EDGE_COLUMNS)
    N, L = skeleton.N, skeleton.L
    v = nodes[:, 0].astype(np.int64)
    if sorted(v.tolist()) != list(range(N)):
        raise LawFileError(f"{node_csv}: need exactly one row for each node 0..{N - 1}")
    nodes = nodes[np.argsort(v)]
    key = skeleton.src * N + skeleton.dst
    ekey = edges[:, 0].astype(np.int64) * N + edges[:, 1].astype(np.int64)
    pos = {int(k): i for i, k in enumerate(ekey)}
    if len(pos) != len(ekey) or len(ekey) != L:
        raise LawFileError(f"{edge_csv}: need exactly one row per skeleton edge ({L})")
    try:
        idx = np.array([pos[int(k)] for k in key], dtype=np.int64)
    except KeyError as exc:
        raise LawFileError(f"{edge_csv}: no row for edge key {exc}") from None
    e = edges[idx]
    return BoundLaws(skeleton, nodes[:, 1], nodes[:, 2], nodes[:, 3], nodes[:, 4], nodes[:, 5], nodes[:, 6], e[:, 2], e[:, 3])


def write_bound_laws(bound: BoundLaws, node_csv, edge_csv) -> None:
    g = bound.skeleton
    Path(node_csv).parent.mkdir(parents=True, exist_ok=True)
    with open(node_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_COLUMNS)
        for v in range(g.N):
            w.writerow(
                [v]
                + [
                    repr(float(x))
                    for x in (
                        bound.p0[v],
                        bound.q0[v],
                        bound.delta_mean[v],
                        bound.delta_std[v],
                        bound.sigma_mean[v],
                        bound.sigma_std[v],
                    )
                ]
            )
    with open(edge_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        for e in range(g.L):
            w.writerow([int(g.src[e]), int(g.dst[e]), repr(float(bound.omega_mean[e])), repr(float(bound.omega_std[e]))])


def with_lambda(model: FixedLtiModel, lam: float, rescale: bool = True) -> FixedLtiModel:
    """Same model at another lambda, scaling exposures by moving grid mass."""
    if not rescale:
        return replace(model, lam=float(lam))
    return replace(model, lam=float(lam), w_g=scale_masses(model.w, 1.0 - lam), w_h=scale_masses(model.w, lam))
