"""MLP against the finite-difference oracle; landscape values and smoothness."""

import numpy as np
import pytest

from samkit import autodiff as ad
from samkit.errors import ConfigurationError
from samkit.models import LANDSCAPES, AnalyticLandscape, Mlp, MlpSpec


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        MlpSpec((4,))
    with pytest.raises(ConfigurationError):
        MlpSpec((4, 0, 2))
    with pytest.raises(ConfigurationError):
        MlpSpec((4, 3), activation="sigmoid")
    with pytest.raises(ConfigurationError):
        MlpSpec((4, 3), loss="hinge")


def test_init_params_deterministic_and_sized():
    m = Mlp(MlpSpec((3, 5, 2)))
    assert m.n_params == 3 * 5 + 5 + 5 * 2 + 2
    np.testing.assert_array_equal(m.init_params(4), m.init_params(4))
    assert not np.array_equal(m.init_params(4), m.init_params(5))


def test_forward_validates_batch():
    m = Mlp(MlpSpec((3, 4, 2)))
    w = m.init_params(0)
    with pytest.raises(ConfigurationError):
        m.loss(w, np.ones((2, 5)), np.array([0, 1]))
    with pytest.raises(ConfigurationError):
        m.loss(w, np.ones((0, 3)), np.array([], dtype=int))
    with pytest.raises(ConfigurationError):
        m.loss(np.ones(3), np.ones((2, 3)), np.array([0, 1]))


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("loss", ["cross-entropy", "squared-error"])
def test_mlp_gradient_matches_oracle_at_20_random_points(activation, loss):
    m = Mlp(MlpSpec((2, 8, 6, 3), activation, loss))
    rng = np.random.default_rng(17)
    X = rng.normal(size=(16, 2))
    y = rng.integers(0, 3, size=16)
    worst = 0.0
    for _ in range(20):
        w = rng.normal(scale=0.8, size=m.n_params)
        _, grad = m.loss_and_grad(w, X, y)
        fd = ad.finite_diff_grad(lambda v: m.loss(v, X, y), w)
        worst = max(worst, ad.relative_error(grad, fd))
    assert worst <= 1e-4, f"worst relative error {worst}"


def test_predict_and_accuracy_shapes():
    m = Mlp(MlpSpec((2, 6, 3)))
    w = m.init_params(0)
    X = np.random.default_rng(0).normal(size=(10, 2))
    proba = m.predict_proba(w, X)
    assert proba.shape == (10, 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    labels = m.predict(w, X)
    assert labels.shape == (10,)
    assert 0.0 <= m.accuracy(w, X, labels) == 1.0


# --- landscapes -------------------------------------------------------------

def test_identity_quadratic_example():
    L = AnalyticLandscape("quadratic", 2)
    assert L.value([3.0, 4.0]) == 12.5
    np.testing.assert_array_equal(L.grad([3.0, 4.0]), [3.0, 4.0])
    assert L.beta == 1.0


def test_scaled_quadratic_example():
    L = AnalyticLandscape("scaled-quadratic", 2)
    assert L.value([1.0, 1.0]) == 2.5
    np.testing.assert_array_equal(L.grad([1.0, 1.0]), [1.0, 4.0])
    assert L.beta == 4.0


def test_wells_stationary_point_has_exact_zero_gradient():
    L = AnalyticLandscape("nonconvex-wells", 5)
    np.testing.assert_array_equal(L.grad(L.stationary_point()), np.zeros(5))


def test_wells_is_nonconvex_at_origin():
    # the origin is a local maximum along each axis
    L = AnalyticLandscape("nonconvex-wells", 1)
    assert L.value([0.3]) < L.value([0.0])
    assert L.value([-0.3]) < L.value([0.0])


@pytest.mark.parametrize("kind", LANDSCAPES)
def test_landscape_gradient_matches_oracle(kind):
    L = AnalyticLandscape(kind, 6)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(25):
        w = rng.uniform(-2, 2, size=6)
        fd = ad.finite_diff_grad(L.value, w)
        worst = max(worst, ad.relative_error(L.grad(w), fd))
    assert worst <= 1e-6, f"worst relative error {worst}"


@pytest.mark.parametrize("kind", LANDSCAPES)
def test_beta_smoothness_on_1000_random_pairs(kind):
    L = AnalyticLandscape(kind, 8)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        w, v = rng.uniform(-5, 5, size=(2, 8))
        lhs = np.linalg.norm(L.grad(w) - L.grad(v))
        rhs = L.beta * np.linalg.norm(w - v) * (1 + 1e-9)
        assert lhs <= rhs


def test_landscape_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        AnalyticLandscape("bowl", 2)
    with pytest.raises(ConfigurationError):
        AnalyticLandscape("quadratic", 0)
    with pytest.raises(ConfigurationError):
        AnalyticLandscape("quadratic", 3).value(np.ones(4))
