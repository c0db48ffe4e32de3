import dataclasses

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from acgn import _kernels
from acgn.capacity import build_design, scalar_bound, solve, waterfill
from acgn.coding import (CodingScheme, UnstableLoop, _LoopModel, mc_tolerance, simulate,
                         spectral_rate, stationary_moments, synthesize, verify_design)
from acgn.noise import ArmaNoiseModel, random_model, require_valid, sample_path

from _gen import random_alloc, random_noise

WHITE1 = ArmaNoiseModel.scalar([], [], 1.0)
AR1 = ArmaNoiseModel.scalar([0.5], [], 1.0)


def scalar_design(noise, sign=1, P=3.0):
    return build_design(noise, [P], sign)


def test_white_scheme_closed_loop():
    s = synthesize(solve(WHITE1, 3.0), WHITE1)
    assert s.closed_loop_matrix()[0, 0] == pytest.approx(0.5)
    assert s.design.Khat[0, 0] == pytest.approx(1.5)


def test_awgn_two_channel_scheme_has_identity_c():
    noise = ArmaNoiseModel.white(np.diag([1.0, 2.0]))
    s = synthesize(solve(noise, 3.0), noise)
    assert s.F == () and s.G == ()
    assert np.allclose(s.design.C, np.eye(2))


def test_ar1_minus_is_stable():
    s = synthesize(scalar_design(AR1, -1), AR1)
    assert s.spectral_radius < 1.0


def test_controller_name_checked():
    with pytest.raises(ValueError):
        synthesize(scalar_design(WHITE1), WHITE1, controller="other")


@pytest.mark.parametrize("controller", ["innovation", "literal"])
def test_kernel_matches_reference_loop(controller):
    rng = np.random.default_rng(2)
    noise = random_model(rng, 2, 2, 1)
    d = build_design(noise, [1.5, 0.7], [1, -1])
    scheme = synthesize(d, noise, controller=controller, check=False)
    T = 1200
    v, vhat = sample_path(noise, T, seed=4)
    y = np.zeros((T, 2))
    e = np.zeros((T, 2))
    # start the reference noise generator from zero too
    v0 = _kernels.arma_filter(noise.F_stack(), noise.G_stack(), np.ascontiguousarray(vhat))
    _kernels.closed_loop(0 if controller == "innovation" else 1, d.A, d.C, d.Khat,
                         noise.F_stack(), noise.G_stack(), v0, 10, 1e12, y, e)
    ry, re = _LoopModel(scheme, noise).run(vhat)
    k = 200
    assert np.allclose(y[:k], ry[:k], atol=1e-9)
    assert np.allclose(e[:k], re[:k], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stationary_power_equals_design(seed):
    rng = np.random.default_rng(seed)
    noise = random_noise(rng)
    P, signs = random_alloc(rng, noise.n)
    d = build_design(noise, P, signs)
    scheme = synthesize(d, noise)
    power, cov = stationary_moments(scheme, noise)
    assert power == pytest.approx(d.transmit_power, rel=1e-8)
    assert np.allclose(cov, d.P, atol=1e-8 * (1 + np.abs(d.P).max()))


def test_literal_recursion_overspends_on_colored_noise():
    d = scalar_design(AR1, -1)
    lit = synthesize(d, AR1, controller="literal")
    power, _ = stationary_moments(lit, AR1)
    assert d.transmit_power == pytest.approx(1.92)
    assert power == pytest.approx(3.0, rel=1e-9)


def test_literal_recursion_marginal_for_plus_branch():
    d = scalar_design(AR1, 1)
    lit = synthesize(d, AR1, controller="literal", check=False)
    assert lit.spectral_radius == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(UnstableLoop):
        synthesize(d, AR1, controller="literal")


def test_literal_equals_innovation_for_white_noise():
    noise = ArmaNoiseModel.white(np.diag([1.0, 2.0]))
    res = solve(noise, 3.0)
    a = simulate(synthesize(res, noise), noise, 5000, seed=1)
    b = simulate(synthesize(res, noise, controller="literal"), noise, 5000, seed=1)
    assert a.empirical_power == pytest.approx(b.empirical_power, rel=1e-12)


def test_spectral_rate_white_scalar():
    s = synthesize(solve(WHITE1, 3.0), WHITE1)
    assert spectral_rate(s, WHITE1, nodes=2**14) == pytest.approx(1.0, abs=1e-6)


def test_spectral_rate_awgn_two_channel():
    noise = ArmaNoiseModel.white(np.diag([1.0, 2.0]))
    s = synthesize(solve(noise, 3.0), noise)
    assert spectral_rate(s, noise) == pytest.approx(0.5 * np.log2(4.5), abs=1e-6)


def test_dead_channel_contributes_nothing():
    noise = ArmaNoiseModel.white(np.diag([1.0, 10.0]))
    res = solve(noise, 1.0)
    assert np.count_nonzero(res.design.alloc.P) == 1
    s = synthesize(res, noise)
    assert s.spectral_radius < 1.0
    assert spectral_rate(s, noise) == pytest.approx(0.5, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spectral_rate_never_below_sum_log_a(seed):
    # each lambda is a sensitivity zero; the whitening controller may add more
    rng = np.random.default_rng(seed)
    noise = random_noise(rng)
    P, signs = random_alloc(rng, noise.n)
    d = build_design(noise, P, signs)
    s = synthesize(d, noise)
    assert spectral_rate(s, noise) >= np.sum(np.log2(d.alloc.a)) - 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spectral_rate_identity_white(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    noise = random_model(rng, n, 0, 0)
    P, signs = random_alloc(rng, n)
    d = build_design(noise, P, signs)
    s = synthesize(d, noise)
    assert spectral_rate(s, noise) == pytest.approx(np.sum(np.log2(d.alloc.a)), abs=1e-6)


def test_literal_spectral_rate_also_matches():
    s = synthesize(scalar_design(AR1, -1), AR1, controller="literal")
    assert spectral_rate(s, AR1) == pytest.approx(1.0, abs=1e-6)


def test_simulate_white_power_and_variance():
    s = synthesize(solve(WHITE1, 3.0), WHITE1)
    r = simulate(s, WHITE1, 10**6, seed=7)
    assert r.empirical_power == pytest.approx(3.0, rel=0.02)
    assert r.empirical_error_cov[0, 0] == pytest.approx(3.0, rel=0.02)


def test_simulate_ar1_minus_power():
    s = synthesize(scalar_design(AR1, -1), AR1)
    r = simulate(s, AR1, 10**6, seed=7)
    assert r.empirical_power == pytest.approx(1.92, rel=0.02)
    assert r.window_rel_diff < 0.05


def test_simulate_deterministic():
    noise = random_model(np.random.default_rng(8), 2, 1, 1)
    s = synthesize(solve(noise, 2.0), noise)
    a = simulate(s, noise, 20000, seed=3, record=True)
    b = simulate(s, noise, 20000, seed=3, record=True)
    assert a.empirical_power == b.empirical_power
    assert np.array_equal(a.empirical_error_cov, b.empirical_error_cov)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.e, b.e)


def test_simulate_needs_more_than_burn_in():
    s = synthesize(solve(WHITE1, 3.0), WHITE1)
    with pytest.raises(ValueError):
        simulate(s, WHITE1, 1000, seed=0)


def test_overflow_guard():
    d = scalar_design(WHITE1)
    bad = dataclasses.replace(d, Khat=-np.ones((1, 1)))
    s = synthesize(bad, WHITE1, check=False)
    with pytest.raises(UnstableLoop):
        simulate(s, WHITE1, 5000, seed=0)


def test_mc_tolerance_policy():
    assert mc_tolerance(1000) is None
    assert mc_tolerance(10**6) == pytest.approx(0.02)
    assert mc_tolerance(250_000) == pytest.approx(0.04)


def test_verify_white_all_pass():
    noise = ArmaNoiseModel.white(np.diag([1.0, 2.0]))
    vr = verify_design(solve(noise, 3.0), noise, T=10**6, seed=1)
    assert vr.passed and vr.n_pass == 6


def test_verify_catches_perturbed_gain():
    res = scalar_bound([], [], 1.0, 3.0)
    bad = dataclasses.replace(res, design=dataclasses.replace(res.design, Khat=1.1 * res.design.Khat))
    vr = verify_design(bad, WHITE1, T=10**6, seed=1)
    assert not vr.passed
    assert set(vr.failed) == {"are", "power", "covariance"}
    # any stabilizing gain has the same sensitivity integral
    assert {c.name: c.status for c in vr.checks}["rate"] == "pass"


def test_verify_short_run_is_inconclusive():
    vr = verify_design(solve(WHITE1, 3.0), WHITE1, T=1000, seed=1)
    assert vr.passed
    assert vr.inconclusive == ["power", "covariance"]


def test_verify_colored_design():
    noise = random_model(np.random.default_rng(12), 2, 1, 1)
    vr = verify_design(solve(noise, 2.5), noise, T=10**6, seed=2)
    assert vr.passed and vr.n_pass == 6


def _jensen_rate(noise, d):
    """Sum of log2 |zeros outside the unit circle| of the scalar sensitivity."""
    lam, K, C = d.alloc.lam[0], d.Khat[0, 0], d.C[0, 0]
    f = [m[0, 0] for m in noise.F]
    g = [m[0, 0] for m in noise.G]
    m = max(len(f), len(g))
    ar = np.zeros(m + 1)
    ar[0] = 1.0
    ar[1:len(f) + 1] -= f
    ma = np.zeros(m + 1)
    ma[0] = 1.0
    ma[1:len(g) + 1] += g
    num = np.polymul([1.0, K - lam], ma) - C * K * np.concatenate(([0.0], ar))
    return sum(np.log2(abs(r)) for r in np.roots(num) if abs(r) > 1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.8, 0.8), max_size=2), st.lists(st.floats(-0.8, 0.8), max_size=2),
       st.floats(0.1, 10.0), st.sampled_from([-1, 1]))
def test_scalar_rate_matches_jensen_oracle(f, g, P, sign):
    try:
        noise = ArmaNoiseModel.scalar(f, g, 1.0)
        require_valid(noise)
    except ValueError:
        assume(False)
    d = build_design(noise, [P], sign)
    s = synthesize(d, noise, check=False)
    assume(s.spectral_radius < 0.999)
    assert spectral_rate(s, noise) == pytest.approx(_jensen_rate(noise, d), abs=1e-8)


def test_extra_sensitivity_zero_raises_rate_above_log_a():
    # strongly correlated AR(1) noise: the whitening controller adds a
    # sensitivity zero outside the unit circle on top of lambda
    noise = ArmaNoiseModel.scalar([0.95], [], 1.0)
    d = build_design(noise, [0.5], 1)
    s = synthesize(d, noise)
    oracle = _jensen_rate(noise, d)
    assert spectral_rate(s, noise) == pytest.approx(oracle, abs=1e-9)
    assert oracle > np.log2(d.alloc.a[0]) + 1e-3
