import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadenet import _kernels
from cascadenet.cascade_mc import (
    CascadeState,
    FixedSource,
    NetworkRealization,
    PoissonSource,
    Status,
    cascade_step,
    monte_carlo,
    realize_network,
    run_cascade,
)
from cascadenet.ensemble import Ensemble, LawSpec
from cascadenet.harness.experiments import exp1_ensemble
from cascadenet.netgen import Skeleton, poisson_skeleton

from oracles import direct_cascade

BIG = 1e9


def net(N, edges, delta, sigma, omega):
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    return NetworkRealization(Skeleton(N, src, dst), np.array(delta, float), np.array(sigma, float), np.array(omega, float))


def random_realization(rng, N, z, grid=4, atom_p=0.15):
    g = poisson_skeleton(N, min(z, 0.8 * (N - 1)), rng)
    delta = rng.integers(1, grid + 1, N) * 0.5
    sigma = rng.integers(1, grid + 1, N) * 0.5
    delta[rng.random(N) < atom_p] = 0.0
    sigma[rng.random(N) < atom_p] = 0.0
    omega = rng.integers(1, grid + 1, g.L) * 0.5
    return NetworkRealization(g, delta, sigma, omega)


def run_steps(real, lam):
    states = [CascadeState.initial(real, lam)]
    while True:
        nxt = cascade_step(states[-1], real, lam)
        if nxt is states[-1]:
            return states
        states.append(nxt)


# ---------------------------------------------------------------- single steps


def test_default_shock_propagates():
    # edge w -> v: w owes v.  w defaulted on day 0, v unstressed
    real = net(2, [(1, 0)], delta=[0.5, 0.0], sigma=[BIG, BIG], omega=[1.0])
    s1 = cascade_step(CascadeState.initial(real, 0.6), real, 0.6)
    assert s1.D[0]


def test_stressed_creditor_takes_reduced_shock():
    # u -> w -> v with v stressed on day 0: w defaults at step 1, and the
    # fresh default reaches v reduced to (1 - lam) * omega = 0.4 < 0.5
    real = net(3, [(2, 1), (1, 0)], delta=[0.5, 0.5, 0.0], sigma=[0.0, BIG, BIG], omega=[1.0, 1.0])
    rep = run_cascade(real, 0.6)
    assert rep.status.tolist() == [Status.STRESSED, Status.DEFAULTED, Status.DEFAULTED]
    assert rep.xi[1] == pytest.approx(0.4)
    # unstressed creditor: the same chain defaults v
    rep = run_cascade(net(3, [(2, 1), (1, 0)], [0.5, 0.5, 0.0], [BIG, BIG, BIG], [1.0, 1.0]), 0.6)
    assert rep.status[0] == Status.DEFAULTED


def test_day0_default_is_full_shock_even_if_creditor_stressed():
    real = net(2, [(1, 0)], delta=[0.5, 0.0], sigma=[0.0, BIG], omega=[1.0])
    assert run_cascade(real, 0.6).status[0] == Status.DEFAULTED


def test_stressed_creditor_recalls_funding():
    # edge v -> w: v owes w.  w stressed, so v loses lam * omega of funding
    real = net(2, [(0, 1)], delta=[BIG, BIG], sigma=[0.4, 0.0], omega=[1.0])
    s1 = cascade_step(CascadeState.initial(real, 0.5), real, 0.5)
    assert s1.S[0] and not s1.D[0]
    assert s1.stress_step[0] == 1
    real = net(2, [(0, 1)], delta=[BIG, BIG], sigma=[0.6, 0.0], omega=[1.0])
    assert not cascade_step(CascadeState.initial(real, 0.5), real, 0.5).S[0]


def test_quiet_network_is_fixed_point():
    real = net(3, [(0, 1), (1, 2)], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.5, 0.5])
    s0 = CascadeState.initial(real, 0.5)
    assert cascade_step(s0, real, 0.5) is s0
    assert run_cascade(real, 0.5).steps_taken == 0


def test_path_full_default():
    real = net(3, [(0, 1), (1, 2)], [0.0, 0.5, 0.5], [BIG] * 3, [1.0, 1.0])
    rep = run_cascade(real, 1.0)
    assert rep.default_frac == 1.0
    assert rep.default_step.tolist() == [0, 1, 2]


def test_high_buffers_keep_day0_defaults_only():
    rng = np.random.default_rng(0)
    real = random_realization(rng, 30, 3)
    incoming = np.bincount(real.skeleton.dst, weights=real.omega, minlength=30)
    delta = np.where(real.delta == 0, 0.0, incoming + 1)
    rep = run_cascade(NetworkRealization(real.skeleton, delta, real.sigma, real.omega), 0.5)
    assert np.array_equal(rep.status == Status.DEFAULTED, delta == 0)


def test_two_cycle_without_regarding():
    # v defaulted on day 0; w defaults only because of its claim on v.  The
    # funding recall w -> v must be judged without v's own shock, so it stays 0.
    real = net(2, [(0, 1), (1, 0)], delta=[0.0, 0.5], sigma=[BIG, BIG], omega=[1.0, 1.0])
    rep = run_cascade(real, 0.5)
    assert rep.status.tolist() == [Status.DEFAULTED, Status.DEFAULTED]
    assert rep.zeta[0] == 0.0  # edge v -> w
    assert rep.zeta[1] == 1.0  # edge w -> v: creditor v is in default


def test_lambda_out_of_range():
    real = net(2, [(0, 1)], [1.0, 1.0], [1.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        run_cascade(real, 1.5)


# ---------------------------------------------------------------- properties


@settings(max_examples=150)
@given(st.integers(0, 2**31 - 1), st.integers(3, 25), st.floats(0.5, 4.0), st.floats(0.0, 1.0))
def test_cascade_invariants(seed, N, z, lam):
    real = random_realization(np.random.default_rng(seed), N, z)
    states = run_steps(real, lam)
    for a, b in zip(states, states[1:]):
        assert np.all(b.D >= a.D)
        assert np.all((b.D | b.S) >= (a.D | a.S))
        assert np.all(b.xi >= a.xi)
    g = real.skeleton
    for s in states:
        assert np.all(np.isin(np.round(s.xi, 12), np.round([0.0, 1 - lam, 1.0], 12)))
        assert np.all(np.isin(np.round(s.zeta, 12), np.round([0.0, lam, 1.0], 12)))
        assert np.all(s.D[g.src[s.xi > 0]])
    rep = run_cascade(real, lam)
    assert rep.steps_taken == len(states) - 1 <= 2 * N
    assert np.array_equal(rep.status, states[-1].status)
    assert rep.default_frac + rep.stress_frac + rep.normal_frac == pytest.approx(1.0)


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1), st.integers(3, 25), st.floats(0.5, 4.0))
def test_lambda_zero_is_pure_default_cascade(seed, N, z):
    real = random_realization(np.random.default_rng(seed), N, z)
    off = NetworkRealization(real.skeleton, real.delta, np.full(N, BIG), real.omega)
    a = run_cascade(real, 0.0).status == Status.DEFAULTED
    b = run_cascade(off, 0.0).status == Status.DEFAULTED
    assert np.array_equal(a, b)


@settings(max_examples=150)
@given(st.integers(0, 2**31 - 1), st.integers(2, 7), st.floats(0.3, 3.0), st.sampled_from([0.0, 0.3, 0.5, 1.0]))
def test_matches_direct_oracle(seed, N, z, lam):
    real = random_realization(np.random.default_rng(seed), N, z)
    g = real.skeleton
    edges = list(zip(g.src.tolist(), g.dst.tolist()))
    D, S = direct_cascade(N, edges, real.omega, real.delta, real.sigma, lam)
    rep = run_cascade(real, lam)
    assert set(np.flatnonzero(rep.status == Status.DEFAULTED).tolist()) == D
    assert set(np.flatnonzero(rep.status == Status.STRESSED).tolist()) == S


def _all_digraphs(N):
    pairs = [(a, b) for a in range(N) for b in range(N) if a != b]
    for mask in range(1 << len(pairs)):
        yield [pairs[i] for i in range(len(pairs)) if mask >> i & 1]


def test_exhaustive_three_node_equivalence():
    # every 3-node digraph, every day-0 shock configuration, grid data
    rng = np.random.default_rng(5)
    for edges in _all_digraphs(3):
        omega = rng.integers(1, 4, len(edges)) * 0.5
        base_d = rng.integers(1, 4, 3) * 0.5
        base_s = rng.integers(1, 4, 3) * 0.5
        for shocks in itertools.product((0, 1, 2), repeat=3):
            delta = np.where(np.array(shocks) == 1, 0.0, base_d)
            sigma = np.where(np.array(shocks) == 2, 0.0, base_s)
            for lam in (0.0, 0.5, 1.0):
                real = net(3, edges, delta, sigma, omega)
                rep = run_cascade(real, lam)
                D, S = direct_cascade(3, edges, omega, delta, sigma, lam)
                assert set(np.flatnonzero(rep.status == Status.DEFAULTED).tolist()) == D
                assert set(np.flatnonzero(rep.status == Status.STRESSED).tolist()) == S


def test_exhaustive_four_node_equivalence():
    # every 4-node digraph; the shock configuration cycles through all 3^4
    rng = np.random.default_rng(6)
    configs = list(itertools.product((0, 1, 2), repeat=4))
    for i, edges in enumerate(_all_digraphs(4)):
        omega = rng.integers(1, 4, len(edges)) * 0.5
        shocks = np.array(configs[i % len(configs)])
        delta = np.where(shocks == 1, 0.0, rng.integers(1, 4, 4) * 0.5)
        sigma = np.where(shocks == 2, 0.0, rng.integers(1, 4, 4) * 0.5)
        lam = (0.0, 0.5, 1.0)[i % 3]
        rep = run_cascade(net(4, edges, delta, sigma, omega), lam)
        D, S = direct_cascade(4, edges, omega, delta, sigma, lam)
        assert set(np.flatnonzero(rep.status == Status.DEFAULTED).tolist()) == D
        assert set(np.flatnonzero(rep.status == Status.STRESSED).tolist()) == S


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1), st.integers(3, 60), st.floats(0.0, 1.0))
def test_numba_and_numpy_kernels_agree(seed, N, lam):
    real = random_realization(np.random.default_rng(seed), N, 3.0)
    g = real.skeleton
    args = (real.delta, real.sigma, g.src, g.dst, real.omega, float(lam), 4 * N + 4)
    a = _kernels._cascade_numba(*args)
    b = _kernels._cascade_numpy(*args)
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


# ---------------------------------------------------------------- realisation


def test_realize_all_defaulted():
    g = poisson_skeleton(50, 3, 0)
    real = realize_network(g, exp1_ensemble(p0=1.0), 1)
    assert np.all(real.delta == 0)
    assert run_cascade(real, 0.5).default_frac == 1.0


def test_realize_day0_defaults_binomial():
    g = poisson_skeleton(10_000, 10, 0)
    real = realize_network(g, exp1_ensemble(p0=0.01), 2)
    n0 = int((real.delta == 0).sum())
    assert abs(n0 - 100) <= 3 * np.sqrt(10_000 * 0.01 * 0.99)
    assert np.all(real.delta[real.delta > 0] == pytest.approx(0.04))
    assert np.all(real.sigma == pytest.approx(0.035))


def test_realize_stress_atom():
    g = poisson_skeleton(20_000, 5, 0)
    ens = Ensemble(LawSpec(1.0), LawSpec(1.0), LawSpec(1.0), p0=0.2, q0=0.1)
    real = realize_network(g, ens, 3)
    stressed_only = np.mean((real.delta > 0) & (real.sigma == 0))
    assert abs(stressed_only - 0.1) < 4 * np.sqrt(0.1 * 0.9 / 20_000)


def test_realize_exposure_moments():
    g = poisson_skeleton(5000, 10, 1)
    real = realize_network(g, exp1_ensemble(), 4)
    ratio = real.omega * g.in_deg[g.dst]  # mean 0.2, std 0.383 * 0.2
    assert ratio.mean() == pytest.approx(0.2, rel=0.02)
    assert ratio.std() == pytest.approx(0.383 * 0.2, rel=0.05)


# ---------------------------------------------------------------- Monte Carlo


def test_mc_single_trial_percentiles():
    res = monte_carlo(PoissonSource(300, 5), exp1_ensemble(), [0.5], 1, 9)
    agg = res.aggregate()
    for kind in ("default", "stress"):
        assert agg[f"p10_{kind}"][0] == agg[f"p90_{kind}"][0] == agg[f"mean_{kind}"][0]


def test_mc_deterministic_and_worker_independent():
    src = PoissonSource(500, 10)
    a = monte_carlo(src, exp1_ensemble(), [0.0, 0.5, 1.0], 12, 42)
    b = monte_carlo(src, exp1_ensemble(), [0.0, 0.5, 1.0], 12, 42)
    c = monte_carlo(src, exp1_ensemble(), [0.0, 0.5, 1.0], 12, 42, workers=2)
    for r in (b, c):
        assert np.array_equal(a.default_frac, r.default_frac)
        assert np.array_equal(a.stress_frac, r.stress_frac)
        assert np.array_equal(a.steps, r.steps)
    d = monte_carlo(src, exp1_ensemble(), [0.0, 0.5, 1.0], 12, 43)
    assert not np.array_equal(a.default_frac, d.default_frac)


def test_mc_fixed_source_single_seeding():
    g = poisson_skeleton(200, 4, 0)
    res = monte_carlo(FixedSource(g), exp1_ensemble(p0=0.0), [1.0], 20, 1, seeding="single")
    assert np.all(res.default_frac >= 1 / 200)


def test_mc_stress_and_default_negatively_correlated():
    res = monte_carlo(PoissonSource(2000, 10), exp1_ensemble(), [0.0, 1.0], 20, 42)
    agg = res.aggregate()
    assert agg["mean_default"][1] < agg["mean_default"][0]
    assert agg["mean_stress"][1] > agg["mean_stress"][0]


def test_mc_rejects_zero_trials():
    with pytest.raises(ValueError):
        monte_carlo(PoissonSource(10, 2), exp1_ensemble(), [0.5], 0, 0)
