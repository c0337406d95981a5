import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadenet.cascade_lti import (
    LawTable,
    LtiModel,
    LtiState,
    build_densities,
    init_state,
    iterate_to_fixed_point,
    lti_model_from_ensemble,
    lti_step,
    marginals,
    pure_default_model,
)
from cascadenet.dists import AliasingError, scale_masses
from cascadenet.harness.experiments import exp1_ensemble
from cascadenet.netgen import EdgeTypeLaw, NodeTypeLaw, poisson_law

from oracles import reference_lti_step


def full_table(rows):
    # one row per type: rows has shape (K+1, K+1, M)
    K1, _, M = rows.shape
    return LawTable(rows.reshape(-1, M), np.arange(K1 * K1).reshape(K1, K1))


def random_model(seed, K=3, M=32, lam=None, assort=None):
    """Small model with support well inside the grid; P symmetric so that
    in- and out-degree means agree, Q a mix of independent and diagonal."""
    rng = np.random.default_rng(seed)
    lam = float(rng.random()) if lam is None else lam
    A = rng.random((K + 1, K + 1)) * (rng.random((K + 1, K + 1)) < 0.7)
    A[1, 1] += 0.1
    A = A + A.T
    P = NodeTypeLaw(A / A.sum())
    a = np.arange(K + 1) * P.out_marginal / P.z
    eps = float(rng.random()) if assort is None else assort
    Q = EdgeTypeLaw((1 - eps) * np.outer(a, a) + eps * np.diag(a))

    def buffer_rows(atom_max):
        atoms = rng.random((K + 1, K + 1)) * atom_max
        dens = rng.random((K + 1, K + 1, 6))
        dens[..., 0] = 0
        dens /= dens.sum(axis=-1, keepdims=True)
        rows = np.zeros((K + 1, K + 1, M))
        rows[..., :6] = dens * (1 - atoms)[..., None]
        rows[..., 0] += atoms
        return atoms, np.cumsum(rows, axis=-1)

    d_atom, d_cdf = buffer_rows(0.3)
    s_atom, s_cdf = buffer_rows(0.3)
    w = np.zeros((K + 1, K + 1, M))
    w[..., 1:4] = rng.random((K + 1, K + 1, 3))
    w /= w.sum(axis=-1, keepdims=True)
    wg = scale_masses(w.reshape(-1, M), 1 - lam).reshape(w.shape)
    wh = scale_masses(w.reshape(-1, M), lam).reshape(w.shape)
    model = LtiModel(
        P, Q, lam, 1.0, d_atom, s_atom, full_table(d_cdf), full_table(s_cdf), full_table(w), full_table(wg), full_table(wh),
        mode="cap",
    )
    return model, (d_cdf, s_cdf, w, wg, wh)


def single_type_model(lam, p0, delta_cell, omega_cell, M=64, q0=0.0, sigma_cell=None):
    P = NodeTypeLaw.from_triples(1, [(1, 1, 1.0)])
    Q = EdgeTypeLaw.from_triples(1, [(1, 1, 1.0)])
    d = np.zeros(M)
    d[0], d[delta_cell] = p0, 1 - p0
    s = np.zeros(M)
    if sigma_cell is not None:
        s[0], s[sigma_cell] = q0, 1 - q0
    w = np.zeros(M)
    w[omega_cell] = 1.0
    tab = lambda row: LawTable(row[None, :], np.zeros((2, 2), dtype=np.int64))  # noqa: E731
    return LtiModel(
        P, Q, lam, 1.0, p0, q0, tab(np.cumsum(d)), tab(np.cumsum(s)), tab(w),
        tab(scale_masses(w, 1 - lam)), tab(scale_masses(w, lam)), mode="cap",
    )


# ---------------------------------------------------------------- initial state


def test_init_zero_atoms():
    model = single_type_model(0.5, 0.0, 4, 2)
    s = init_state(model)
    for tab in s.tables():
        assert np.all(tab == 0)


def test_init_uniform_atom_marginal():
    P = poisson_law(10, 40)
    model = lti_model_from_ensemble(exp1_ensemble(p0=0.01), P, EdgeTypeLaw.independent(P), 0.5, 0.000625, 4096)
    p_k, _, _ = marginals(init_state(model), model)
    live = P.out_marginal > 0
    assert np.allclose(p_k[live], 0.01)


def test_init_t_independent_of_j():
    model, _ = random_model(1)
    K = model.K
    atoms = np.tile(np.linspace(0.0, 0.3, K + 1), (K + 1, 1))  # depends on k only
    from dataclasses import replace

    s = init_state(replace(model, d_atom=atoms))
    assert np.allclose(s.t, s.t[:, :1])
    assert np.allclose(s.q, s.qh * (1 - s.p))


# ---------------------------------------------------------------- densities


def test_zero_state_densities_are_unit_atoms():
    model, _ = random_model(2)
    K = model.K
    z = np.zeros((K + 1, K + 1))
    dens = build_densities(LtiState(0, z, z, z, z, z), model)
    live_j = model.Q.Q.sum(axis=0) > 0
    live_k = model.Q.Q.sum(axis=1) > 0
    for arr, live in ((dens.g, live_j), (dens.gt, live_j), (dens.h, live_k)):
        assert np.allclose(arr[live, 0], 1.0) and np.allclose(arr[live, 1:], 0.0)


def test_three_term_mixture():
    model = single_type_model(0.5, 0.0, 20, 8)
    K1 = 2
    p = np.zeros((K1, K1))
    p[1, 1] = 0.3
    t = np.zeros((K1, K1))
    t[1, 1] = 0.2
    z = np.zeros((K1, K1))
    g = build_densities(LtiState(1, p, z, z, z, t), model).g[1]
    expected = np.zeros(model.M)
    expected[0], expected[8], expected[4] = 0.7, 0.2, 0.1
    assert np.allclose(g, expected, atol=1e-15)


def test_full_protection_branch_at_lambda_one():
    model = single_type_model(1.0, 0.0, 20, 8)
    p = np.zeros((2, 2))
    p[1, 1] = 0.3
    t = np.zeros((2, 2))
    t[1, 1] = 0.2
    z = np.zeros((2, 2))
    g = build_densities(LtiState(1, p, z, z, z, t), model).g[1]
    assert g[0] == pytest.approx(0.8) and g[8] == pytest.approx(0.2)


def test_negative_weight_is_rejected():
    model = single_type_model(0.5, 0.0, 20, 8)
    p = np.zeros((2, 2))
    p[1, 1] = 0.1
    t = np.zeros((2, 2))
    t[1, 1] = 0.5
    z = np.zeros((2, 2))
    with pytest.raises(ValueError):
        build_densities(LtiState(1, p, z, z, z, t), model)


# ---------------------------------------------------------------- mapping


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_step_matches_reference(seed):
    model, (dc, sc, w, wg, wh) = random_model(seed)
    state = init_state(model)
    for _ in range(4):
        ref = reference_lti_step(*state.tables(), model.P.P, model.Q.Q, dc, sc, w, wg, wh)
        state = lti_step(state, model)
        for got, want in zip(state.tables(), ref):
            assert np.allclose(got, np.clip(want, 0, 1), atol=1e-12)


def test_isolated_type_keeps_initial_default():
    model, _ = random_model(3)
    res = iterate_to_fixed_point(model)
    p0 = init_state(model).p
    assert res.state.p[0, :] == pytest.approx(p0[0, :])


def test_scalar_recursion():
    # one in- and one out-edge per node, deterministic buffer below the exposure
    model = single_type_model(0.7, 0.01, 3, 5)
    state = init_state(model)
    seq = [state.p[1, 1]]
    for _ in range(3):
        state = lti_step(state, model)
        seq.append(state.p[1, 1])
    assert seq == pytest.approx([0.01, 0.0199, 0.029701, 0.03940399], abs=1e-12)


def test_zero_shock_converges_at_once():
    model = single_type_model(0.5, 0.0, 3, 5, sigma_cell=4)
    res = iterate_to_fixed_point(model)
    assert res.iterations == 1 and res.converged
    assert res.expected_defaults(1000) == 0


def test_expected_defaults_marginalization():
    model, _ = random_model(4)
    res = iterate_to_fixed_point(model)
    p_k, _, _ = marginals(res.state, model)
    assert res.expected_defaults(500) == pytest.approx(500 * (model.P.out_marginal * p_k).sum(), abs=1e-9)


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_monotone_and_bounded(seed):
    model, _ = random_model(seed)
    state = init_state(model)
    for _ in range(12):
        new = lti_step(state, model)
        for name in ("p", "pt", "qh", "t"):
            assert np.all(getattr(new, name) >= getattr(state, name) - 1e-12)
        p_k, _, _ = marginals(new, model)
        assert np.all(new.t <= p_k[:, None] + 1e-12)
        assert np.all(new.p + new.q <= 1 + 1e-12)
        dens = build_densities(new, model)
        for arr in (dens.g, dens.h, dens.gt):
            tot = arr.sum(axis=1)
            assert np.all((np.abs(tot - 1) < 1e-9) | (tot == 0))
        state = new


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_lambda_zero_matches_pure_default(seed):
    model, _ = random_model(seed, lam=0.0)
    a = iterate_to_fixed_point(model, tol=1e-13)
    b = iterate_to_fixed_point(pure_default_model(model), tol=1e-13)
    assert np.max(np.abs(a.state.p - b.state.p)) < 1e-9


def test_exp1_lambda_extremes():
    P = poisson_law(10, 40)
    Q = EdgeTypeLaw.independent(P)
    lo = iterate_to_fixed_point(lti_model_from_ensemble(exp1_ensemble(), P, Q, 0.0, 0.000625, 4096))
    hi = iterate_to_fixed_point(lti_model_from_ensemble(exp1_ensemble(), P, Q, 1.0, 0.000625, 4096))
    assert lo.default_frac > 0.5 and lo.stress_frac < hi.stress_frac
    assert hi.default_frac < 0.1 and hi.stress_frac > 0.5


def test_wrap_mode_detects_aliasing():
    P = poisson_law(10, 40)
    Q = EdgeTypeLaw.independent(P)
    with pytest.raises(AliasingError):  # exposure tail beyond a 64-cell grid
        lti_model_from_ensemble(exp1_ensemble(), P, Q, 0.0, 0.005, 64)
    model = lti_model_from_ensemble(exp1_ensemble(), P, Q, 0.0, 0.005, 64, exposure_tail_tol=None)
    with pytest.raises(AliasingError):  # convolution powers wrap around
        iterate_to_fixed_point(model)


def test_cap_mode_agrees_with_wrap_when_alias_free():
    P = poisson_law(10, 40)
    Q = EdgeTypeLaw.independent(P)
    a = iterate_to_fixed_point(lti_model_from_ensemble(exp1_ensemble(), P, Q, 0.5, 0.000625, 4096, mode="wrap"))
    b = iterate_to_fixed_point(lti_model_from_ensemble(exp1_ensemble(), P, Q, 0.5, 0.000625, 4096, mode="cap"))
    assert a.default_frac == pytest.approx(b.default_frac, abs=1e-6)
    assert a.stress_frac == pytest.approx(b.stress_frac, abs=1e-6)


def test_inconsistent_laws_rejected():
    model, _ = random_model(5)
    from dataclasses import replace

    bad = EdgeTypeLaw(np.roll(model.Q.Q, 1, axis=0))
    with pytest.raises(ValueError):
        replace(model, Q=bad)


def test_subnormal_lambda_is_no_stress_transmission():
    P = poisson_law(10, 40)
    Q = EdgeTypeLaw.independent(P)
    tiny = lti_model_from_ensemble(exp1_ensemble(), P, Q, 5e-324, 0.005, 256, mode="cap")
    zero = lti_model_from_ensemble(exp1_ensemble(), P, Q, 0.0, 0.005, 256, mode="cap")
    assert np.array_equal(tiny.w_h.rows, zero.w_h.rows)
