import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acgn.capacity import (Allocation, RationalWeight, build_design, channel_weight, design_c_columns,
                           scalar_bound, solve, solve_general, solve_independent, water_level,
                           waterfill)
from acgn.linalg import SymEig, sym_eig
from acgn.noise import ArmaNoiseModel, random_model

from _gen import random_alloc, random_noise

HALF_LOG2_4_5 = 0.5 * np.log2(4.5)


def cost_scalar(f, g, var, x):
    num = 1.0 + sum(c * x ** -(j + 1) for j, c in enumerate(g))
    den = 1.0 - sum(c * x ** -(i + 1) for i, c in enumerate(f))
    return (num / den) ** 2 * (x * x - 1.0) * var


def test_allocation_rate_identity():
    a = Allocation(P=[2.0, 1.0, 0.0], Vhat_eigs=[1.0, 2.0, 3.0], signs=1)
    assert a.rate_bits == pytest.approx(a.rate_bits_from_a, abs=1e-12)
    assert a.sign == 1
    assert Allocation(P=[1.0, 1.0], Vhat_eigs=[1.0, 1.0], signs=[1, -1]).sign == 0


def test_allocation_rejects_negative_power():
    with pytest.raises(ValueError):
        Allocation(P=[-1.0], Vhat_eigs=[1.0], signs=1)


def test_build_design_white():
    noise = ArmaNoiseModel.white(np.diag([1.0, 2.0]))
    d = build_design(noise, [2.0, 1.0], 1, basis=SymEig(np.eye(2), np.array([1.0, 2.0])))
    assert np.allclose(d.A, np.diag([np.sqrt(3.0), np.sqrt(1.5)]))
    assert np.allclose(d.C, np.eye(2))
    assert d.transmit_power == pytest.approx(3.0)
    assert d.alloc.rate_bits == pytest.approx(HALF_LOG2_4_5, abs=1e-12)


@pytest.mark.parametrize("sign,C,power", [(1, 4.0 / 3.0, 16.0 / 3.0), (-1, 0.8, 1.92)])
def test_build_design_ar1(sign, C, power):
    d = build_design(ArmaNoiseModel.scalar([0.5], [], 1.0), [3.0], sign)
    assert d.A[0, 0] == pytest.approx(2.0 * sign)
    assert d.C[0, 0] == pytest.approx(C, rel=1e-12)
    assert d.transmit_power == pytest.approx(power, rel=1e-12)
    assert d.alloc.rate_bits == pytest.approx(1.0, abs=1e-12)


def test_build_design_rejects_zero_allocation():
    with pytest.raises(ValueError):
        build_design(ArmaNoiseModel.white(np.eye(2)), [0.0, 0.0], 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_closed_form_covariance_solves_are(seed):
    rng = np.random.default_rng(seed)
    noise = random_noise(rng)
    P, signs = random_alloc(rng, noise.n)
    d = build_design(noise, P, signs)
    A, Pm, V = d.A, d.P, noise.Vhat
    r = Pm - A @ Pm @ A.T + A @ Pm @ np.linalg.solve(Pm + V, Pm @ A.T)
    assert np.abs(r).sum(axis=1).max() <= 1e-9 * (1 + np.abs(Pm).sum(axis=1).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_power_splits_per_channel(seed):
    # tr(C P C^T) = sum P_l ||M(lam_l) u_l||^2 and the column form equals the Kronecker design
    rng = np.random.default_rng(seed)
    noise = random_noise(rng)
    P, signs = random_alloc(rng, noise.n)
    d = build_design(noise, P, signs)
    lam = d.alloc.lam
    assert np.allclose(design_c_columns(noise, d.U, lam), d.C, atol=1e-10)
    split = sum(P[l] * channel_weight(noise, d.U[:, l], lam[l])[0] for l in range(noise.n))
    assert split == pytest.approx(d.transmit_power, rel=1e-10)


@pytest.mark.parametrize("V,budget,zeta,P", [((1.0, 2.0), 3.0, 3.0, (2.0, 1.0)),
                                             ((1.0, 10.0), 1.0, 2.0, (1.0, 0.0)),
                                             ((5.0,), 1e-4, None, (1e-4,))])
def test_waterfill_examples(V, budget, zeta, P):
    a = waterfill(V, budget)
    if zeta is not None:
        assert a.water_level == pytest.approx(zeta, abs=1e-12)
    assert np.allclose(a.P, P, atol=1e-12)
    assert a.P.sum() == pytest.approx(budget, rel=1e-12)


def test_waterfill_rate():
    assert waterfill([1.0, 2.0], 3.0).rate_bits == pytest.approx(HALF_LOG2_4_5, abs=1e-12)
    assert waterfill([1.0, 10.0], 1.0).rate_bits == pytest.approx(0.5, abs=1e-12)


def test_water_level_needs_positive_budget():
    with pytest.raises(ValueError, match="budget must be positive"):
        water_level([1.0], 0.0)


def test_independent_white_is_waterfill():
    noise = ArmaNoiseModel.white(np.diag([1.0, 2.0, 0.5]))
    r = solve_independent(noise, 2.0)
    wf = waterfill([1.0, 2.0, 0.5], 2.0)
    assert r.lower_bound_bits == pytest.approx(wf.rate_bits, abs=1e-9)
    assert np.allclose(r.design.alloc.P, wf.P, atol=1e-7)


def test_independent_ar1_picks_minus():
    r = solve_independent(ArmaNoiseModel.scalar([0.5], [], 1.0), 1.92)
    assert r.design.alloc.signs[0] == -1
    assert r.design.alloc.a[0] == pytest.approx(2.0, abs=1e-10)
    assert r.lower_bound_bits == pytest.approx(1.0, abs=1e-10)


def test_independent_awgn():
    assert solve_independent(ArmaNoiseModel.scalar([], [], 1.0), 3.0).lower_bound_bits == \
        pytest.approx(1.0, abs=1e-12)


def test_independent_requires_diagonal():
    with pytest.raises(ValueError):
        solve_independent(ArmaNoiseModel.white([[2.0, 1.0], [1.0, 2.0]]), 1.0)


def test_general_white_nondiagonal():
    r = solve_general(ArmaNoiseModel.white([[2.0, 1.0], [1.0, 2.0]]), 2.0)
    assert r.lower_bound_bits == pytest.approx(0.5 * np.log2(3.0), abs=1e-9)
    assert np.allclose(r.design.alloc.Vhat_eigs, [3.0, 1.0])
    assert np.allclose(r.design.alloc.P, [0.0, 2.0], atol=1e-7)
    assert r.design.transmit_power == pytest.approx(2.0, rel=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_general_matches_independent_on_diagonal(seed):
    rng = np.random.default_rng(seed)
    noise = random_model(rng, int(rng.integers(1, 4)), int(rng.integers(0, 3)),
                         int(rng.integers(0, 3)), diagonal=True)
    budget = float(rng.uniform(0.5, 6.0))
    g = solve_general(noise, budget, sign_policy="global")
    i = solve_independent(noise, budget, sign_policy="global")
    assert g.lower_bound_bits == pytest.approx(i.lower_bound_bits, abs=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_general_beats_its_starts_and_meets_budget(seed):
    rng = np.random.default_rng(seed)
    noise = random_model(rng, int(rng.integers(2, 4)), 1, 1)
    budget = float(rng.uniform(0.5, 6.0))
    r = solve_general(noise, budget, restarts=2, seed=seed)
    assert r.design.transmit_power == pytest.approx(budget, rel=1e-8)
    assert r.lower_bound_bits >= r.diagnostics["best_start_rate_bits"] - 1e-12


def test_general_per_channel_at_least_global():
    noise = random_model(np.random.default_rng(4), 2, 1, 0)
    g = solve_general(noise, 3.0, sign_policy="global")
    pc = solve_general(noise, 3.0, sign_policy="per_channel")
    assert pc.lower_bound_bits >= g.lower_bound_bits - 1e-9


def test_scalar_bound_awgn():
    r = scalar_bound([], [], 2.0, 5.0)
    assert r.design.alloc.a[0] == pytest.approx(np.sqrt(1 + 5.0 / 2.0), abs=1e-12)


def test_scalar_bound_ar1():
    r = scalar_bound([0.5], [], 1.0, 1.92)
    assert r.lower_bound_bits == pytest.approx(1.0, abs=1e-12)
    assert r.design.alloc.sign == -1


def test_scalar_bound_ma1_plus_branch():
    r = scalar_bound([], [0.5], 1.0, 4.6875, sign_policy="+")
    assert r.lower_bound_bits == pytest.approx(1.0, abs=1e-12)


def test_scalar_bound_takes_largest_root():
    # sign + with f = 0.95 makes the cost non-monotone in a
    f, budget = [0.95], 10.0
    assert cost_scalar(f, [], 1.0, 1.1) > budget > cost_scalar(f, [], 1.0, 1.5)
    r = scalar_bound(f, [], 1.0, budget, sign_policy="+")
    a = r.design.alloc.a[0]
    assert cost_scalar(f, [], 1.0, a) == pytest.approx(budget, rel=1e-10)
    grid = np.linspace(a * (1 + 1e-9), 50 * a, 5000)
    assert np.all(cost_scalar(f, [], 1.0, grid) > budget)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.1, 5.0))
def test_bound_monotone_in_budget(f, var):
    rates = [scalar_bound([f], [], var, b).lower_bound_bits for b in (0.5, 1.0, 2.0, 4.0, 8.0)]
    assert np.all(np.diff(rates) >= -1e-12)


def test_basis_invariance_repeated_eigenvalue():
    noise = ArmaNoiseModel(F=[0.3 * np.eye(2)], G=[], Vhat=2.0 * np.eye(2))
    rng = np.random.default_rng(9)
    rates = []
    for _ in range(4):
        Q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        d = build_design(noise, [1.0, 3.0], -1, basis=SymEig(Q, np.array([2.0, 2.0])))
        rates.append((d.alloc.rate_bits, d.transmit_power))
    white = solve_general(ArmaNoiseModel.white(2.0 * np.eye(2)), 3.0)
    assert np.ptp([r for r, _ in rates]) <= 1e-9
    assert np.ptp([p for _, p in rates]) <= 1e-9
    assert white.lower_bound_bits == pytest.approx(np.log2(1.75), abs=1e-9)


def test_solve_routes_by_structure():
    assert solve(ArmaNoiseModel.white(np.eye(2)), 1.0).method == "waterfill"
    assert solve(ArmaNoiseModel.scalar([0.5], [], 1.0), 1.0).method == "independent_1d"
    assert solve(random_model(np.random.default_rng(1), 2, 1, 0), 1.0).method == "general_search"


def test_solve_rejects_nonpositive_budget():
    with pytest.raises(ValueError, match="budget must be positive"):
        solve(ArmaNoiseModel.white(np.eye(1)), -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rational_weight_matches_direct(seed):
    rng = np.random.default_rng(seed)
    noise = random_noise(rng)
    u = sym_eig(noise.Vhat).U[:, 0]
    x = np.concatenate([np.linspace(1.0, 4.0, 25), -np.linspace(1.0, 4.0, 25), [50.0, -1e4]])
    w = RationalWeight(noise, u)(x)
    assert np.allclose(w, channel_weight(noise, u, x), rtol=1e-11, atol=1e-13)


def test_searches_reach_waterfilling_allocation_tightly():
    noise = ArmaNoiseModel.white(np.diag([1.0, 2.0, 0.5]))
    wf = waterfill([1.0, 2.0, 0.5], 4.0)
    ref = dict(zip(wf.Vhat_eigs, wf.P))
    for r in (solve_general(noise, 4.0), solve_independent(noise, 4.0)):
        a = r.design.alloc
        for v, p in zip(a.Vhat_eigs, a.P):
            assert abs(p - ref[v]) < 1e-10
