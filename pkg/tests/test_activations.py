import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from probitbnn.activations import (
    RELU,
    PwlParams,
    calibrate_probit,
    default_grid,
    pwl_moments,
    softmax,
    softmax_deriv_expectations,
    softmax_moments,
    surrogate_mse,
)
from probitbnn.errors import CalibrationError, ConfigurationError
from probitbnn.gauss import GaussianDiag
from probitbnn.mvn import DEFAULT_LAMBDA, DEFAULT_RHO, ProbitConfig, default_probit_config
from probitbnn.oracle import McConfig, chunk_rng, mc_pwl_moments, mc_softmax_moments

PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


# -- piecewise linear ----------------------------------------------------------


def test_pwl_params_validation():
    with pytest.raises(ConfigurationError):
        PwlParams(0.5, 0.2)
    with pytest.raises(ConfigurationError):
        PwlParams(-0.1, 1.0)


def test_relu_standard_normal():
    m = pwl_moments(GaussianDiag([0.0], [1.0]), RELU)
    assert m.mean_y[0] == pytest.approx(PHI0, abs=1e-15)
    assert m.cov_y[0, 0] == pytest.approx(0.5 - 1 / (2 * math.pi), abs=1e-15)
    assert m.cov_zy[0, 0] == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    mu=st.lists(st.floats(-5, 5), min_size=1, max_size=4),
    data=st.data(),
)
def test_identity_activation_collapses(mu, data):
    var = data.draw(st.lists(st.floats(0, 4), min_size=len(mu), max_size=len(mu)))
    z = GaussianDiag(mu, var)
    m = pwl_moments(z, PwlParams(1.0, 1.0))
    np.testing.assert_allclose(m.mean_y, z.mean, atol=1e-12)
    np.testing.assert_allclose(np.diag(m.cov_y), z.var, atol=1e-11)
    np.testing.assert_allclose(np.diag(m.cov_zy), z.var, atol=1e-11)


def test_zero_variance_limit():
    z = GaussianDiag([-1.5, 0.0, 2.0], [0.0, 0.0, 0.0])
    m = pwl_moments(z, PwlParams(0.1, 1.0))
    np.testing.assert_allclose(m.mean_y, [-0.15, 0.0, 2.0])
    np.testing.assert_allclose(np.diag(m.cov_y), 0.0, atol=1e-15)
    np.testing.assert_allclose(np.diag(m.cov_zy), 0.0, atol=1e-15)


def test_pwl_is_diagonal():
    m = pwl_moments(GaussianDiag([0.1, -0.3], [1.0, 2.0]), RELU)
    assert m.cov_y[0, 1] == 0.0 and m.cov_zy[1, 0] == 0.0


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(0, 5), var=st.floats(0, 4), alpha=st.floats(0, 1))
def test_leaky_mean_dominates_slope(mu, var, alpha):
    m = pwl_moments(GaussianDiag([mu], [var]), PwlParams(alpha, 1.0))
    assert m.mean_y[0] >= alpha * mu - 1e-12
    assert m.cov_y[0, 0] >= 0.0


@pytest.mark.slow
def test_relu_against_sampling():
    got = pwl_moments(GaussianDiag([1.0], [0.25]), RELU)
    ref, se = mc_pwl_moments([1.0], [0.25], RELU, McConfig(10_000_000, 9))
    assert abs(got.mean_y[0] - ref.mean_y[0]) <= 3 * se.mean_y[0]
    assert abs(got.cov_y[0, 0] - ref.cov_y[0, 0]) <= 3 * se.cov_y[0]
    assert abs(got.cov_zy[0, 0] - ref.cov_zy[0, 0]) <= 3 * se.cov_zy[0]


# -- softmax derivative expectations ---------------------------------------------


def test_two_class_center_derivative():
    d = softmax_deriv_expectations(GaussianDiag([0.0, 0.0], [0.0, 0.0])).d
    # sqrt(pi/8) / sqrt(2 pi) = 1/4, which is also y1*y2 at z = (0, 0)
    assert d[0, 1] == pytest.approx(0.25, abs=1e-15)
    assert d[1, 0] == pytest.approx(0.25, abs=1e-15)
    assert d[0, 0] == 0.0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_saturated_derivative_vanishes(n):
    mu = np.zeros(n)
    mu[0] = -40.0
    d = softmax_deriv_expectations(GaussianDiag(mu, np.full(n, 1e-6))).d
    assert np.all(d[0, 1:] <= 1e-9)


def _sampled_products(mu, var, samples, seed):
    acc = np.zeros((len(mu), len(mu)))
    done, k = 0, 0
    while done < samples:
        size = min(1 << 18, samples - done)
        z = np.asarray(mu) + np.sqrt(var) * chunk_rng(seed, k).standard_normal((size, len(mu)))
        y = softmax(z)
        acc += y.T @ y
        done += size
        k += 1
    return acc / samples


@pytest.mark.slow
def test_derivatives_match_output_products():
    mu, var = [1.0, 0.0, -1.0], [0.5, 0.5, 0.5]
    d = softmax_deriv_expectations(GaussianDiag(mu, var)).d
    ref = _sampled_products(mu, var, 1_000_000, 17)
    off = ~np.eye(3, dtype=bool)
    # probit approximation budget, far above MC error at this sample size
    assert np.max(np.abs(d[off] - ref[off])) <= 0.02


def test_row_identity_at_deterministic_inputs():
    worst = 0.0
    for theta in default_grid(3):
        z = np.array([0.0, -theta[0], -theta[1]])
        d = softmax_deriv_expectations(GaussianDiag(z, [0.0] * 3)).d
        y = softmax(z)
        worst = max(worst, np.abs(d.sum(axis=1) - y * (1 - y)).max())
    assert worst <= 0.03


@settings(max_examples=25, deadline=None)
@given(mu=st.lists(st.floats(-4, 4), min_size=2, max_size=4), data=st.data())
def test_derivatives_nonnegative(mu, data):
    var = data.draw(st.lists(st.floats(0, 3), min_size=len(mu), max_size=len(mu)))
    d = softmax_deriv_expectations(GaussianDiag(mu, var)).d
    assert np.all(d >= 0)
    assert np.all(np.diag(d) == 0)


def test_single_logit_rejected():
    with pytest.raises(ConfigurationError):
        softmax_deriv_expectations(GaussianDiag([0.0], [1.0]))


# -- softmax moments -------------------------------------------------------------


def sigmoid_reference(mu_a, var_a, lam=DEFAULT_LAMBDA):
    """Moments of ``Phi(lam a)`` under ``a ~ N(mu_a, var_a)`` via Stein's lemma."""
    s = math.sqrt(1 + lam * lam * var_a)
    t = lam * mu_a / s
    g = lam / s * PHI0 * math.exp(-0.5 * t * t)
    mean = float(ndtr(t))
    return mean, max(mean - mean * mean - g, 0.0), var_a * g


@settings(max_examples=200, deadline=None)
@given(mu_a=st.floats(-5, 5), var_a=st.floats(1e-6, 4), share=st.floats(0, 1), shift=st.floats(-3, 3))
def test_two_classes_reduce_to_sigmoid(mu_a, var_a, share, shift):
    z = GaussianDiag([mu_a + shift, shift], [share * var_a, (1 - share) * var_a])
    m = softmax_moments(z)
    mean, var, cov_ay = sigmoid_reference(mu_a, var_a)
    assert m.mean_y[0] == pytest.approx(mean, abs=1e-12)
    assert m.cov_y[0, 0] == pytest.approx(var, abs=1e-12)
    assert m.cov_zy[0, 0] - m.cov_zy[1, 0] == pytest.approx(cov_ay, abs=1e-12)


def test_symmetric_three_classes():
    m = softmax_moments(GaussianDiag([0.0] * 3, [0.8] * 3))
    np.testing.assert_allclose(m.mean_y, [1 / 3, 1 / 3], atol=1e-6)


@pytest.mark.slow
def test_three_class_moments_against_sampling():
    mu, var = [1.0, 0.0, -1.0], [0.5, 0.5, 0.5]
    got = softmax_moments(GaussianDiag(mu, var))
    ref, se = mc_softmax_moments(mu, var, McConfig(1_000_000, 21))
    assert np.all(np.abs(got.mean_y - ref.mean_y) <= np.maximum(3 * se.mean_y, 0.02))
    assert np.max(np.abs(got.cov_y - ref.cov_y)) <= 0.02
    assert np.max(np.abs(got.cov_zy - ref.cov_zy)) <= 0.02


@settings(max_examples=30, deadline=None)
@given(mu=st.lists(st.floats(-6, 6), min_size=2, max_size=4), data=st.data())
def test_moment_invariants(mu, data):
    var = data.draw(st.lists(st.floats(0, 4), min_size=len(mu), max_size=len(mu)))
    m = softmax_moments(GaussianDiag(mu, var))
    assert np.all((m.mean_y >= 0) & (m.mean_y <= 1))
    assert m.mean_y.sum() <= 1 + 1e-8
    np.testing.assert_array_equal(m.cov_y, m.cov_y.T)
    assert np.all(np.diag(m.cov_y) >= 0)
    assert m.cov_zy.shape == (len(mu), len(mu) - 1)


def test_deterministic_means_track_softmax():
    worst = 0.0
    for theta in default_grid(3):
        z = np.array([0.0, -theta[0], -theta[1]])
        m = softmax_moments(GaussianDiag(z, [0.0] * 3))
        worst = max(worst, np.abs(m.mean_y - softmax(z)[:2]).max())
    assert worst <= 0.02


def test_clamp_is_counted():
    # wide logits push the approximated variance below zero somewhere on this line
    counts = [
        softmax_moments(GaussianDiag([mu, 0.0, -mu], [0.01] * 3)).n_clamped
        for mu in np.linspace(0, 6, 25)
    ]
    assert sum(counts) > 0


def test_softmax_is_stable():
    y = softmax(np.array([1000.0, 0.0, -1000.0]))
    np.testing.assert_allclose(y, [1.0, 0.0, 0.0])


# -- calibration -------------------------------------------------------------


def test_calibration_two_classes_bracket():
    cfg = calibrate_probit(2)
    assert 0.55 <= cfg.lambda_ <= 0.70


def test_calibration_degenerate_grid():
    cfg = calibrate_probit(2, grid=[[0.0]])
    assert cfg.lambda_ == DEFAULT_LAMBDA and cfg.rho == DEFAULT_RHO


def test_calibration_three_classes_no_worse():
    grid = default_grid(3)
    cfg = calibrate_probit(3)
    assert surrogate_mse(grid, cfg.lambda_, cfg.rho) <= surrogate_mse(grid, DEFAULT_LAMBDA, DEFAULT_RHO)


def test_three_class_default_is_the_fit():
    fit = calibrate_probit(3)
    assert default_probit_config(3).lambda_ == pytest.approx(fit.lambda_, rel=1e-9)


def test_calibration_reports_best_on_budget_exhaustion():
    with pytest.raises(CalibrationError) as err:
        calibrate_probit(2, max_sweeps=1)
    assert isinstance(err.value.best, ProbitConfig)


def test_calibration_grid_shape_checked():
    with pytest.raises(ConfigurationError):
        calibrate_probit(3, grid=[[0.0]])
