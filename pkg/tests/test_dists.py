import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadenet.dists import (
    AliasingError,
    BufferLaw,
    ExposureLaw,
    GridError,
    GridPmf,
    capped_convolve,
    capped_power,
    conv_power,
    convolve,
    direct_convolve,
    discretize_lognormal,
    fft,
    ifft,
    point_mass,
    scale_pmf,
    threshold_prob,
)

from oracles import brute_threshold


def random_pmf(rng, M, support=None):
    support = M if support is None else support
    m = np.zeros(M)
    m[:support] = rng.random(support)
    return m / m.sum()


# ---------------------------------------------------------------- discretize


def test_lognormal_near_degenerate_concentrates():
    pmf = discretize_lognormal(1.0, 1e-6, 0.01, 256)
    assert pmf.masses[100] > 1 - 1e-9


def test_lognormal_mean_within_two_cells():
    h = 0.2 / 64
    pmf = discretize_lognormal(0.2, 0.383 * 0.2, h, 4096)
    assert abs(pmf.mean() - 0.2) < 2 * h
    assert abs(pmf.std() - 0.383 * 0.2) < 2 * h
    pmf.check_total()


def test_lognormal_cdf_matches_samples():
    rng = np.random.default_rng(11)
    h, M = 0.05, 2048
    pmf = discretize_lognormal(2.0, 1.0, h, M)
    s2 = np.log1p(0.25)
    x = rng.lognormal(np.log(2.0) - s2 / 2, np.sqrt(s2), 10**6)
    edges = (np.arange(M) + 0.5) * h
    emp = np.searchsorted(np.sort(x), edges, side="right") / x.size
    assert np.max(np.abs(emp - pmf.cdf())) < 0.01


def test_lognormal_tail_guard():
    with pytest.raises(AliasingError):
        discretize_lognormal(10.0, 10.0, 0.01, 64)
    pmf, tail = discretize_lognormal(10.0, 10.0, 0.01, 64, tail_tol=None, return_tail=True)
    assert tail > 0.5
    pmf.check_total()


# ---------------------------------------------------------------- fft


def test_fft_trivial_cases():
    assert np.all(fft(np.zeros(16)) == 0)
    e0 = np.zeros(16)
    e0[0] = 1
    assert np.allclose(fft(e0), 1.0)


def test_fft_needs_power_of_two():
    with pytest.raises(GridError):
        fft(np.zeros(12))


def test_parseval_random():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(64)
    assert abs(np.dot(a, a) - np.vdot(fft(a), fft(a)).real / 64) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([8, 32, 128]))
def test_fft_roundtrip(seed, M):
    a = np.random.default_rng(seed).standard_normal(M) + 1j * np.random.default_rng(seed + 1).standard_normal(M)
    assert np.max(np.abs(ifft(fft(a)) - a)) < 1e-10


# ---------------------------------------------------------------- convolution


def test_convolve_identity():
    rng = np.random.default_rng(0)
    f = GridPmf(1.0, random_pmf(rng, 64, 20))
    out = convolve(GridPmf.delta0(1.0, 64), f)
    assert np.allclose(out.masses, f.masses, atol=1e-15)


def test_convolve_two_term():
    a = GridPmf.from_cells(1.0, 8, {1: 0.5, 2: 0.5})
    b = GridPmf.from_cells(1.0, 8, {1: 1.0})
    out = convolve(a, b)
    assert np.allclose(out.masses, [0, 0, 0.5, 0.5, 0, 0, 0, 0], atol=1e-15)


def test_convolve_uniforms_triangular():
    u = GridPmf(1.0, np.r_[np.full(8, 1 / 8), np.zeros(56)])
    out = convolve(u, u).masses
    expected = np.r_[np.minimum(np.arange(1, 16), np.arange(15, 0, -1)) / 64, np.zeros(49)]
    assert np.allclose(out, expected, atol=1e-15)
    assert int(np.argmax(out)) == 7


def test_convolve_grid_mismatch_and_aliasing():
    with pytest.raises(GridError):
        convolve(GridPmf.delta0(1.0, 8), GridPmf.delta0(0.5, 8))
    top = GridPmf.from_cells(1.0, 8, {6: 1.0})
    with pytest.raises(AliasingError):
        convolve(top, top)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([16, 64, 256]))
def test_convolve_matches_direct(seed, M):
    rng = np.random.default_rng(seed)
    a = random_pmf(rng, M, M // 2)
    b = random_pmf(rng, M, M // 2)
    out = convolve(GridPmf(1.0, a), GridPmf(1.0, b)).masses
    assert np.max(np.abs(out - direct_convolve(a, b))) < 1e-10


def test_conv_power_small_cases():
    a = GridPmf.from_cells(1.0, 64, {0: 0.5, 1: 0.5})
    assert np.array_equal(conv_power(a, 0).masses, GridPmf.delta0(1.0, 64).masses)
    assert conv_power(a, 1) is a
    from scipy.stats import binom

    out = conv_power(a, 10).masses
    assert np.allclose(out[:11], binom.pmf(np.arange(11), 10, 0.5), atol=1e-12)
    assert np.allclose(out[11:], 0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 6), st.integers(0, 6))
def test_conv_power_additive(seed, m, n):
    rng = np.random.default_rng(seed)
    a = GridPmf(1.0, random_pmf(rng, 256, 12))
    lhs = conv_power(a, m + n).masses
    rhs = convolve(conv_power(a, m), conv_power(a, n)).masses
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_conv_power_aliasing_detected():
    a = GridPmf.from_cells(1.0, 16, {5: 1.0})
    with pytest.raises(AliasingError):
        conv_power(a, 4)


# ---------------------------------------------------------------- capped algebra


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_capped_convolve_pools_overflow(seed):
    rng = np.random.default_rng(seed)
    M = 16
    a, b = random_pmf(rng, M), random_pmf(rng, M)
    full = np.convolve(a, b)
    expected = np.r_[full[: M - 1], full[M - 1 :].sum()]
    assert np.allclose(capped_convolve(a, b), expected, atol=1e-12)


def test_capped_power_rows():
    rng = np.random.default_rng(2)
    a = np.array([random_pmf(rng, 16, 5) for _ in range(3)])
    out = capped_power(a, np.array([0, 1, 3]))
    assert out[0, 0] == 1.0 and np.all(out[0, 1:] == 0)
    assert np.allclose(out[1], a[1])
    ref = capped_convolve(capped_convolve(a[2], a[2]), a[2])
    assert np.allclose(out[2], ref, atol=1e-12)


# ---------------------------------------------------------------- scaling


def test_scale_identity_and_exact_landing():
    a = GridPmf.from_cells(1.0, 32, {10: 1.0})
    assert np.array_equal(scale_pmf(a, 1.0).masses, a.masses)
    assert np.allclose(scale_pmf(a, 0.5).masses, GridPmf.from_cells(1.0, 32, {5: 1.0}).masses)


def test_scale_linear_split():
    a = GridPmf.from_cells(1.0, 32, {10: 1.0})
    out = scale_pmf(a, 0.55).masses
    assert np.isclose(out[5], 0.5) and np.isclose(out[6], 0.5)


def test_scale_zero_collapses():
    a = GridPmf.from_cells(1.0, 32, {3: 0.2, 10: 0.8})
    out = scale_pmf(a, 0.0).masses
    assert out[0] == pytest.approx(1.0) and out[1:].sum() == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_scale_preserves_mass_and_mean(seed, factor):
    rng = np.random.default_rng(seed)
    a = GridPmf(0.1, random_pmf(rng, 128, 64))
    out = scale_pmf(a, factor)
    assert abs(out.total - a.total) < 1e-12
    assert abs(out.mean() - factor * a.mean()) <= a.grid_step


# ---------------------------------------------------------------- threshold


def test_threshold_enumerated():
    buf = BufferLaw.from_values(0.0, 2.0, 1.0, 8)
    shock = GridPmf.from_cells(1.0, 8, {1: 0.5, 3: 0.5})
    assert threshold_prob(buf, shock) == pytest.approx(0.5)
    assert threshold_prob(buf, shock, method="fft") == pytest.approx(0.5, abs=1e-12)


def test_threshold_tie_breaches():
    buf = BufferLaw.from_values(0.0, 3.0, 1.0, 8)
    shock = GridPmf.from_cells(1.0, 8, {3: 1.0})
    assert threshold_prob(buf, shock) == pytest.approx(1.0)


def test_threshold_atoms():
    sure = BufferLaw(1.0, GridPmf(1.0, np.zeros(8)))
    assert threshold_prob(sure, GridPmf.delta0(1.0, 8)) == 1.0
    law = BufferLaw.from_values(0.3, 4.0, 1.0, 8)
    assert threshold_prob(law, GridPmf.delta0(1.0, 8)) == pytest.approx(0.3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_threshold_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    M = 16
    bm = random_pmf(rng, M, 10)
    atom = float(bm[0])
    dens = bm.copy()
    dens[0] = 0
    buf = BufferLaw(atom, GridPmf(1.0, dens))
    sm = random_pmf(rng, M)
    got = threshold_prob(buf, GridPmf(1.0, sm))
    ref = brute_threshold(range(M), bm, range(M), sm)
    assert got == pytest.approx(ref, abs=1e-12)
    assert threshold_prob(buf, GridPmf(1.0, sm), method="fft") == pytest.approx(ref, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 14))
def test_threshold_monotone_in_shock(seed, cell):
    rng = np.random.default_rng(seed)
    M = 16
    dens = random_pmf(rng, M)
    dens[0] = 0
    dens /= dens.sum()
    buf = BufferLaw(0.0, GridPmf(1.0, dens))
    sm = random_pmf(rng, M)
    moved = sm.copy()
    moved[cell + 1] += moved[cell]
    moved[cell] = 0
    assert threshold_prob(buf, GridPmf(1.0, moved)) >= threshold_prob(buf, GridPmf(1.0, sm)) - 1e-15


# ---------------------------------------------------------------- laws


def test_buffer_law_invariants():
    law = BufferLaw.lognormal(0.2, 1.0, 0.5, 0.05, 256)
    assert law.atom0 + law.density.total == pytest.approx(1.0, abs=1e-9)
    assert law.cdf()[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        BufferLaw(0.5, GridPmf.from_cells(1.0, 8, {2: 0.4}))


def test_exposure_law_has_no_zero_mass():
    law = ExposureLaw.lognormal(0.02, 0.02, 0.01, 256)
    assert law.density.masses[0] < 1e-12
    with pytest.raises(ValueError):
        ExposureLaw(GridPmf.from_cells(1.0, 8, {0: 0.5, 1: 0.5}))


def test_point_mass_off_grid_split():
    pm = point_mass(2.25, 1.0, 8).masses
    assert pm[2] == pytest.approx(0.75) and pm[3] == pytest.approx(0.25)
    with pytest.raises(GridError):
        point_mass(9.0, 1.0, 8)
