"""Analytic double cascade on random skeletons under locally tree-like independence.

State tables are indexed ``[j, k]`` for node types (in-degree j, out-degree
k) and ``[k, j]`` for edge types (debtor out-degree k, creditor in-degree j).
Buffer and exposure laws are stored once per distinct law, with an index
table mapping each type onto its row, so type-independent ensembles cost a
single row.

Two convolution regimes are supported (see :mod:`cascadenet.dists`):
``"wrap"`` takes circular powers through one transform and guards against
wrap-around; ``"cap"`` pools all mass beyond the grid in the top cell and is
safe for heavy-tailed shocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dists import (
    ALIAS_TOL,
    AliasingError,
    BufferLaw,
    ExposureLaw,
    GridError,
    capped_power,
    discretize_lognormal,
    point_mass,
    power_wrap_estimate,
    scale_masses,
    _lift_cell0,
)
from .ensemble import Ensemble, LawSpec
from .netgen import EdgeTypeLaw, NodeTypeLaw, check_consistency

log = logging.getLogger(__name__)

MODES = ("wrap", "cap")


@dataclass(frozen=True, eq=False)
class LawTable:
    """Distinct law rows plus an index array mapping types to rows."""

    rows: np.ndarray
    index: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", np.atleast_2d(np.asarray(self.rows, dtype=float)))
        object.__setattr__(self, "index", np.asarray(self.index, dtype=np.int64))
        if self.index.size and (self.index.min() < 0 or self.index.max() >= self.rows.shape[0]):
            raise ValueError("law index out of range")

    def __getitem__(self, key) -> np.ndarray:
        return self.rows[self.index[key]]


def _dedupe(keys: list, make) -> LawTable:
    # keys: per-type hashable keys in flat order; make(key) -> row
    uniq: dict = {}
    idx = np.empty(len(keys), dtype=np.int64)
    for i, key in enumerate(keys):
        if key not in uniq:
            uniq[key] = len(uniq)
        idx[i] = uniq[key]
    rows = [make(key) for key in uniq]
    return LawTable(np.array(rows), idx)


@dataclass(frozen=True, eq=False)
class LtiModel:
    """Everything the random-skeleton cascade mapping needs.

    ``d_cdf`` / ``s_cdf`` hold cumulative buffer laws (atom included) indexed
    ``[j, k]``; ``w``, ``w_g`` and ``w_h`` hold exposure densities indexed
    ``[k, j]``, unscaled, scaled by 1 - lambda and scaled by lambda.
    """

    P: NodeTypeLaw
    Q: EdgeTypeLaw
    lam: float
    grid_step: float
    d_atom: np.ndarray
    s_atom: np.ndarray
    d_cdf: LawTable
    s_cdf: LawTable
    w: LawTable
    w_g: LawTable
    w_h: LawTable
    mode: str = "wrap"
    alias_tol: float = ALIAS_TOL
    consistency_tol: float = 1e-9

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        rep = check_consistency(self.P, self.Q, self.consistency_tol)
        if not rep.consistent:
            raise ValueError(f"inconsistent node/edge type laws (max violation {rep.max_violation:.2e})")
        K = self.K
        for name in ("d_atom", "s_atom"):
            a = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (K + 1, K + 1)).copy()
            object.__setattr__(self, name, a)
        Ms = {t.rows.shape[1] for t in (self.d_cdf, self.s_cdf, self.w, self.w_g, self.w_h)}
        if len(Ms) != 1:
            raise GridError("all law tables must share the grid size")

    @property
    def K(self) -> int:
        return self.P.K

    @property
    def M(self) -> int:
        return self.w.rows.shape[1]

    @property
    def z(self) -> float:
        return self.P.z

    # conditionals; zero marginals give zero rows so their types drop out
    @property
    def P_j_given_k(self) -> np.ndarray:  # [j, k]
        return _normalize(self.P.P, axis=0)

    @property
    def P_k_given_j(self) -> np.ndarray:  # [j, k]
        return _normalize(self.P.P, axis=1)

    @property
    def Q_k_given_j(self) -> np.ndarray:  # [k, j]
        return _normalize(self.Q.Q, axis=0)

    @property
    def Q_j_given_k(self) -> np.ndarray:  # [k, j]
        return _normalize(self.Q.Q, axis=1)

    def with_lambda(self, lam: float, w_g: LawTable | None = None, w_h: LawTable | None = None) -> "LtiModel":
        """Same model at another lambda; scaled exposure tables are rebuilt by grid scaling
        unless supplied."""
        if w_g is None:
            w_g = LawTable(scale_masses(self.w.rows, 1.0 - lam), self.w.index)
        if w_h is None:
            w_h = LawTable(scale_masses(self.w.rows, lam), self.w.index)
        return replace(self, lam=float(lam), w_g=w_g, w_h=w_h)


def _normalize(a: np.ndarray, axis: int) -> np.ndarray:
    s = a.sum(axis=axis, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, a / np.where(s > 0, s, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class LtiState:
    n: int
    p: np.ndarray  # [j, k]
    q: np.ndarray  # [j, k]
    pt: np.ndarray  # [j, k]  default without regarding one in-neighbour
    qh: np.ndarray  # [j, k]  stress buffer breached
    t: np.ndarray  # [k, j]  P[xi = 1] on an edge of type (k, j)

    def tables(self) -> tuple[np.ndarray, ...]:
        return self.p, self.q, self.pt, self.qh, self.t


def marginals(state: LtiState, model: LtiModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(p_k, ptilde_j, qhat_j)."""
    p_k = (state.p * model.P_j_given_k).sum(axis=0)
    pt_j = (state.pt * model.P_k_given_j).sum(axis=1)
    qh_j = (state.qh * model.P_k_given_j).sum(axis=1)
    return p_k, pt_j, qh_j


def init_state(model: LtiModel) -> LtiState:
    p0 = model.d_atom.copy()
    qh0 = model.s_atom.copy()
    p_k = (p0 * model.P_j_given_k).sum(axis=0)
    t0 = np.repeat(p_k[:, None], model.K + 1, axis=1)
    return LtiState(0, p0, qh0 * (1.0 - p0), p0.copy(), qh0, t0)


@dataclass(frozen=True, eq=False)
class Densities:
    g: np.ndarray  # (K+1, M) per creditor in-degree j
    h: np.ndarray  # (K+1, M) per debtor out-degree k
    gt: np.ndarray  # (K+1, M) per j


def _mix(weights: np.ndarray, table: LawTable, type_index: np.ndarray, out_rows: int) -> np.ndarray:
    # sum over the summed-out type of weights[r, s] * table.rows[index[r, s]]
    U = table.rows.shape[0]
    coef = np.zeros((out_rows, U))
    r = np.repeat(np.arange(out_rows), weights.shape[1])
    np.add.at(coef, (r, type_index.ravel()), weights.ravel())
    return coef @ table.rows


def _check_weights(*ws: np.ndarray) -> None:
    for w in ws:
        if w.size and w.min() < -1e-12:
            raise ValueError(f"negative mixture weight {w.min():.3e} (t exceeds p upstream)")


def build_densities(state: LtiState, model: LtiModel) -> Densities:
    """Mixture laws of one default shock (g), one stress shock (h) and one
    undiminished default shock (gtilde) arriving over a random edge."""
    K, M = model.K, model.M
    p_k, pt_j, qh_j = marginals(state, model)
    Qkj = model.Q_k_given_j  # [k, j]
    Qjk = model.Q_j_given_k  # [k, j]
    # g_j: sum over debtor out-degree k'
    w_full = (Qkj * state.t).T  # [j, k']
    w_scaled = (Qkj * (p_k[:, None] - state.t)).T
    w_zero = (Qkj * (1.0 - p_k[:, None])).sum(axis=0)
    _check_weights(w_full, w_scaled, w_zero)
    widx = model.w.index.T  # [j, k']
    g = _mix(w_full, model.w, widx, K + 1) + _mix(w_scaled, model.w_g, widx, K + 1)
    g[:, 0] += w_zero
    # h_k: sum over creditor in-degree j'
    h_full = Qjk * pt_j[None, :]
    h_scaled = Qjk * (qh_j * (1.0 - pt_j))[None, :]
    h_zero = (Qjk * ((1.0 - qh_j) * (1.0 - pt_j))[None, :]).sum(axis=1)
    _check_weights(h_full, h_scaled, h_zero)
    h = _mix(h_full, model.w, model.w.index, K + 1) + _mix(h_scaled, model.w_h, model.w.index, K + 1)
    h[:, 0] += h_zero
    # gtilde_j
    gt = _mix((Qkj * p_k[:, None]).T, model.w, widx, K + 1)
    gt[:, 0] += w_zero
    return Densities(g, h, gt)


def powers(rows: np.ndarray, n: np.ndarray, mode: str, alias_tol: float = ALIAS_TOL) -> np.ndarray:
    """Row-wise convolution powers ``rows[r] ** n[r]`` in the chosen regime."""
    n = np.asarray(n, dtype=np.int64)
    if mode == "cap":
        return capped_power(rows, n)
    M = rows.shape[1]
    out = np.clip(np.fft.irfft(np.fft.rfft(rows, axis=-1) ** n[:, None], M, axis=-1), 0.0, None)
    out[n == 0] = 0.0
    out[n == 0, 0] = 1.0
    wrapped = power_wrap_estimate(rows, out, n)
    if wrapped.size and wrapped.max() > alias_tol:
        r = int(np.argmax(wrapped))
        raise AliasingError(wrapped[r], alias_tol, f"convolution power {int(n[r])}")
    return out


def _inner(cdf: LawTable, pw: np.ndarray, by_j: bool) -> np.ndarray:
    # <cdf[j, k], pw[j or k]> for all (j, k)
    full = cdf.rows @ pw.T  # (U, K+1)
    K1 = pw.shape[0]
    j, k = np.meshgrid(np.arange(K1), np.arange(K1), indexing="ij")
    return full[cdf.index, j if by_j else k]


def lti_step(state: LtiState, model: LtiModel) -> LtiState:
    """One application of the cascade mapping."""
    K = model.K
    dens = build_densities(state, model)
    deg = np.arange(K + 1)
    gj = powers(dens.g, deg, model.mode, model.alias_tol)
    gj1 = powers(dens.g, np.maximum(deg - 1, 0), model.mode, model.alias_tol)
    hk = powers(dens.h, deg, model.mode, model.alias_tol)
    gtj = powers(dens.gt, deg, model.mode, model.alias_tol)
    p = np.clip(_inner(model.d_cdf, gj, True), 0.0, 1.0)
    pt = np.clip(_inner(model.d_cdf, gj1, True), 0.0, 1.0)
    qh = np.clip(_inner(model.s_cdf, hk, False), 0.0, 1.0)
    undiminished = np.clip(_inner(model.d_cdf, gtj, True), 0.0, 1.0)
    q = np.clip(1.0 - p - (1.0 - qh) * (1.0 - undiminished), 0.0, None)
    q = np.minimum(q, 1.0 - p)
    p_k_old, _, qh_j_old = marginals(state, model)
    p_k_new = (p * model.P_j_given_k).sum(axis=0)
    t = state.t + (p_k_new - p_k_old)[:, None] * (1.0 - qh_j_old)[None, :]
    t = np.clip(t, 0.0, p_k_new[:, None])
    return LtiState(state.n + 1, p, q, pt, qh, t)


@dataclass(frozen=True, eq=False)
class LtiResult:
    state: LtiState
    iterations: int
    converged: bool
    default_frac: float
    stress_frac: float
    history: list = field(default_factory=list, repr=False)

    def expected_defaults(self, N: int) -> float:
        return N * self.default_frac

    def expected_stressed(self, N: int) -> float:
        return N * self.stress_frac


def expected_fractions(state: LtiState, model: LtiModel) -> tuple[float, float]:
    P = model.P.P
    return float((P * state.p).sum()), float((P * state.q).sum())


def iterate_to_fixed_point(
    model: LtiModel, tol: float = 1e-8, max_iter: int = 500, keep_history: bool = False
) -> LtiResult:
    """Apply :func:`lti_step` until the sup-norm change of every table is below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = init_state(model)
    history = [expected_fractions(state, model)] if keep_history else []
    converged = False
    it = 0
    while it < max_iter:
        new = lti_step(state, model)
        it += 1
        change = max(float(np.max(np.abs(a - b))) for a, b in zip(new.tables(), state.tables()))
        state = new
        if keep_history:
            history.append(expected_fractions(state, model))
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("LTI iteration stopped after %d steps without reaching tol=%g", it, tol)
    d, s = expected_fractions(state, model)
    return LtiResult(state, it, converged, d, s, history)


def pure_default_model(model: LtiModel) -> LtiModel:
    """The same model with the stress channel removed (stress buffers never breached)."""
    K = model.K
    zero = LawTable(np.zeros((1, model.M)), np.zeros((K + 1, K + 1), dtype=np.int64))
    return replace(model, s_atom=np.zeros((K + 1, K + 1)), s_cdf=zero)


# --------------------------------------------------------------------------
# construction from parametric ensembles


def buffer_row(atom0: float, mean: float, std: float, grid_step: float, M: int, tail_tol) -> np.ndarray:
    """Cumulative law of a log-normal-with-atom buffer on the grid."""
    if atom0 >= 1 or mean == 0:
        return np.ones(M)
    if std == 0:
        law = BufferLaw.from_values(atom0, mean, grid_step, M)
    else:
        law = BufferLaw.lognormal(atom0, mean, std, grid_step, M, tail_tol=tail_tol)
    return law.cdf()


def exposure_row(mean: float, std: float, grid_step: float, M: int, tail_tol) -> np.ndarray:
    if std == 0:
        return _lift_cell0(point_mass(mean, grid_step, M).masses)
    return ExposureLaw.lognormal(mean, std, grid_step, M, tail_tol=tail_tol).density.masses


def _lognormal_scaled_row(mean, std, factor, grid_step, M, tail_tol):
    # law of factor * Omega; factor 0 (or a product that underflows) is the unit mass at zero
    if factor == 0 or mean * factor == 0:
        out = np.zeros(M)
        out[0] = 1.0
        return out
    if std == 0:
        return point_mass(mean * factor, grid_step, M).masses
    return discretize_lognormal(mean * factor, std * factor, grid_step, M, tail_tol=tail_tol).masses


def lti_model_from_ensemble(
    ens: Ensemble,
    P: NodeTypeLaw,
    Q: EdgeTypeLaw,
    lam: float,
    grid_step: float,
    M: int,
    mode: str = "wrap",
    buffer_tail_tol: float | None = 1e-6,
    exposure_tail_tol: float | None = 1e-6,
) -> LtiModel:
    """Discretise an ensemble on the grid.

    Scaled exposure laws are discretised directly from the scaled log-normal
    rather than by moving grid mass, so that in ``"cap"`` mode mass pooled in
    the top cell keeps its meaning.  In ``"cap"`` mode exposure tails beyond
    the grid are pooled, so ``exposure_tail_tol`` is ignored there.
    """
    K = P.K
    if Q.K != K:
        raise ValueError("P and Q must share K")
    if mode == "cap":
        exposure_tail_tol = None
    jj, kk = np.meshgrid(np.arange(K + 1), np.arange(K + 1), indexing="ij")
    d_atom = np.full((K + 1, K + 1), ens.p0)
    s_atom = np.full((K + 1, K + 1), ens.q0 / (1.0 - ens.p0) if ens.p0 < 1 else 0.0)

    def node_table(spec: LawSpec, atom: np.ndarray) -> LawTable:
        # atom is updated in place: an identically-zero law is a unit atom
        mean, std = spec.params(jj, kk)
        atom[mean == 0] = 1.0
        live = P.P > 0
        keys = [
            (float(atom[j, k]), float(mean[j, k]), float(std[j, k])) if live[j, k] else (1.0, 0.0, 0.0)
            for j in range(K + 1)
            for k in range(K + 1)
        ]
        tab = _dedupe(keys, lambda key: buffer_row(*key, grid_step, M, buffer_tail_tol))
        return LawTable(tab.rows, tab.index.reshape(K + 1, K + 1))

    d_cdf = node_table(ens.delta, d_atom)
    s_cdf = node_table(ens.sigma, s_atom)

    kq, jq = np.meshgrid(np.arange(K + 1), np.arange(K + 1), indexing="ij")
    om, osd = ens.omega.params(jq, kq)  # [k, j]
    c = ens.omega_scale_for_law(Q)
    om, osd = om * c, osd * c
    live = Q.Q > 0
    first = np.argwhere(live)
    k0, j0 = first[0] if first.size else (0, 0)
    keys = [
        (float(om[k, j]), float(osd[k, j])) if live[k, j] else (float(om[k0, j0]), float(osd[k0, j0]))
        for k in range(K + 1)
        for j in range(K + 1)
    ]

    def table(make) -> LawTable:
        tab = _dedupe(keys, make)
        return LawTable(tab.rows, tab.index.reshape(K + 1, K + 1))

    w = table(lambda key: exposure_row(*key, grid_step, M, exposure_tail_tol))
    w_g = table(lambda key: _lognormal_scaled_row(*key, 1.0 - lam, grid_step, M, exposure_tail_tol))
    w_h = table(lambda key: _lognormal_scaled_row(*key, lam, grid_step, M, exposure_tail_tol))
    return LtiModel(P, Q, float(lam), grid_step, d_atom, s_atom, d_cdf, s_cdf, w, w_g, w_h, mode=mode)
