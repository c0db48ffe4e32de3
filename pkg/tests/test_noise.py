import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acgn import _kernels
from acgn.noise import (ArmaNoiseModel, InvalidNoiseModel, inverse_filter_taps, random_model,
                        require_valid, sample_path, validate, whiten_path)


def test_unit_root_is_invalid():
    d = validate(ArmaNoiseModel.scalar([1.0], [], 1.0))
    assert not d.ok
    assert d.ar_max_modulus == pytest.approx(1.0)


def test_explosive_ar_message():
    d = validate(ArmaNoiseModel.scalar([1.1], [], 1.0))
    assert "AR polynomial root modulus 1.1 >= 1" in d.failures[0]


def test_non_minimum_phase_rejected():
    with pytest.raises(InvalidNoiseModel, match="minimum phase"):
        require_valid(ArmaNoiseModel.scalar([], [1.5], 1.0))


def test_vhat_must_be_positive_definite():
    d = validate(ArmaNoiseModel.white([[1.0, 2.0], [2.0, 1.0]]))
    assert not d.ok and "positive definite" in d.failures[0]


def test_structure_flags():
    m = ArmaNoiseModel(F=[np.diag([0.1, 0.2])], G=[], Vhat=np.diag([1.0, 2.0]))
    assert m.is_diagonal and not m.is_white and m.order == 1
    assert ArmaNoiseModel.white(np.eye(2)).is_white


def test_ar1_variance():
    m = ArmaNoiseModel.scalar([0.5], [], 1.0)
    v, _ = sample_path(m, 400_000, seed=3)
    assert np.var(v) == pytest.approx(4.0 / 3.0, rel=0.02)


def test_sample_path_deterministic():
    m = random_model(np.random.default_rng(0), 2, 2, 1)
    a, _ = sample_path(m, 1000, seed=11)
    b, _ = sample_path(m, 1000, seed=11)
    assert np.array_equal(a, b)


def test_innovation_covariance():
    V = np.array([[2.0, 0.6], [0.6, 1.0]])
    _, vhat = sample_path(ArmaNoiseModel.white(V), 300_000, seed=5)
    assert np.allclose(np.cov(vhat.T), V, atol=0.03)


def test_ma1_taps():
    h = inverse_filter_taps(ArmaNoiseModel.scalar([], [0.5], 1.0), L=3)
    assert np.allclose([t[0, 0] for t in h.H], [0.5, -0.25, 0.125])


def test_taps_need_order():
    with pytest.raises(ValueError):
        inverse_filter_taps(ArmaNoiseModel.scalar([0.1, 0.1, 0.1], [], 1.0), L=2)


def test_white_has_no_taps():
    assert inverse_filter_taps(ArmaNoiseModel.white(np.eye(2))).L == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_taps_match_frequency_response(seed):
    # I - F^-1(z) = sum H_i z^-i on the unit circle
    rng = np.random.default_rng(seed)
    m = random_model(rng, int(rng.integers(1, 4)), int(rng.integers(0, 3)), int(rng.integers(1, 3)))
    h = inverse_filter_taps(m)
    assert h.truncation_ok
    z = np.exp(1j * np.linspace(-np.pi, np.pi, 17))
    series = np.zeros((z.size, m.n, m.n), dtype=complex)
    for i, H in enumerate(h.H, start=1):
        series += z[:, None, None] ** -i * H
    assert np.allclose(np.eye(m.n) - m.inverse_filter(z), series, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_whitening_inverts_shaping(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, int(rng.integers(1, 4)), int(rng.integers(0, 4)), int(rng.integers(0, 4)))
    x = rng.normal(size=(300, m.n))
    v = _kernels.arma_filter(m.F_stack(), m.G_stack(), x)
    assert np.allclose(whiten_path(m, v), x, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_random_models_are_valid(seed, diagonal):
    rng = np.random.default_rng(seed)
    m = random_model(rng, int(rng.integers(1, 5)), int(rng.integers(0, 4)), int(rng.integers(0, 4)),
                     diagonal=diagonal)
    assert validate(m).ok
    assert m.is_diagonal or not diagonal
