import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from probitbnn.errors import ConfigurationError, NumericalError
from probitbnn.mvn import (
    DEFAULT_LAMBDA,
    ProbitConfig,
    bvn_cdf,
    default_probit_config,
    gaussian_probit_integral,
    mvn_cdf,
    mvn_cdf_partial,
    std_correlation,
)
from probitbnn.oracle import McConfig, chunk_rng, mc_probit_identity

PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


def equicorr(m, rho):
    c = np.full((m, m), rho)
    np.fill_diagonal(c, 1.0)
    return c


# -- configuration -------------------------------------------------------------


def test_config_rejects_bad_lambda():
    with pytest.raises(ConfigurationError):
        ProbitConfig(0.0)


def test_config_rejects_bad_rho():
    with pytest.raises(ConfigurationError):
        ProbitConfig(0.6, 1.0)


def test_config_rejects_indefinite_matrix():
    with pytest.raises(NumericalError):
        ProbitConfig(0.6, equicorr(3, -0.9))


def test_shared_rho_too_negative_for_dimension():
    with pytest.raises(ConfigurationError):
        ProbitConfig(0.6, -0.6).rho_matrix(3)


def test_two_class_default_is_classical():
    cfg = default_probit_config(2)
    assert cfg.lambda_ == DEFAULT_LAMBDA and cfg.rho == 0.5


# -- std_correlation -----------------------------------------------------------


def test_two_classes_give_unit_matrix():
    np.testing.assert_array_equal(std_correlation(ProbitConfig(), [0.3, 0.7], 0), [[1.0]])


def test_zero_variance_keeps_base():
    c = std_correlation(ProbitConfig(rho=0.5), [0.0, 0.0, 0.0], 2)
    assert c[0, 1] == pytest.approx(0.5)


def test_unit_variances_first_class():
    c = std_correlation(ProbitConfig(rho=0.5), [1.0, 1.0, 1.0], 0)
    assert c[0, 1] == pytest.approx((0.5 + 1.0) / 3.0)


def test_bad_class_index():
    with pytest.raises(ConfigurationError):
        std_correlation(ProbitConfig(), [1.0, 1.0, 1.0], 3)


@settings(max_examples=50, deadline=None)
@given(
    var=st.lists(st.floats(0, 5), min_size=2, max_size=5),
    rho=st.floats(0, 0.95),
    data=st.data(),
)
def test_std_correlation_is_correlation(var, rho, data):
    j = data.draw(st.integers(0, len(var) - 1))
    c = std_correlation(ProbitConfig(rho=rho), var, j)
    np.testing.assert_allclose(np.diag(c), 1.0)
    np.testing.assert_allclose(c, c.T)
    assert np.linalg.eigvalsh(c)[0] > -1e-12


# -- mvn_cdf -----------------------------------------------------------------


def test_univariate_median():
    assert mvn_cdf([0.0], [[1.0]]) == 0.5


@pytest.mark.parametrize("rho", [-0.95, -0.9, -0.5, 0.0, 0.3, 0.5, 0.9, 0.95, 0.999])
def test_orthant_formula(rho):
    got = mvn_cdf([0.0, 0.0], equicorr(2, rho))
    assert got == pytest.approx(0.25 + math.asin(rho) / (2 * math.pi), abs=1e-12)


def test_bivariate_matches_scipy():
    rng = np.random.default_rng(11)
    for _ in range(40):
        a, b = rng.uniform(-3, 3, 2)
        r = rng.uniform(-0.99, 0.99)
        ref = multivariate_normal(cov=equicorr(2, r)).cdf([a, b])
        assert bvn_cdf(a, b, r) == pytest.approx(ref, abs=1e-7)


def test_trivariate_orthant():
    # three-fold symmetric orthant with rho = 0.5: 1/8 + 3 asin(0.5) / (4 pi) = 1/4
    assert mvn_cdf([0.0] * 3, equicorr(3, 0.5)) == pytest.approx(0.25, abs=1e-6)


@pytest.mark.slow
def test_trivariate_against_plain_monte_carlo():
    upper = np.array([0.3, -0.2, 1.1])
    corr = equicorr(3, 0.5)
    root = np.linalg.cholesky(corr)
    hits = total = 0
    for k in range(40):  # 40 * 250k = 1e7 draws
        t = chunk_rng(2024, k).standard_normal((250_000, 3)) @ root.T
        hits += int(np.all(t <= upper, axis=1).sum())
        total += t.shape[0]
    p = hits / total
    se = math.sqrt(p * (1 - p) / total)
    assert abs(mvn_cdf(upper, corr) - p) <= 3 * se


def test_four_dim_against_scipy():
    corr = equicorr(4, 0.3)
    upper = np.array([0.5, -0.4, 1.0, 0.1])
    ref = multivariate_normal(cov=corr).cdf(upper)
    assert mvn_cdf(upper, corr) == pytest.approx(ref, abs=1e-4)


def test_saturation():
    corr = equicorr(3, 0.4)
    assert mvn_cdf([8.0, 9.0, 10.0], corr) >= 1 - 1e-9
    assert mvn_cdf([8.0, -8.0, 10.0], corr) <= 1e-9
    assert mvn_cdf([40.0, 40.0], equicorr(2, 0.2)) == 1.0


def test_deterministic_for_fixed_seed():
    corr = equicorr(4, 0.2)
    u = [0.1, 0.2, -0.3, 0.4]
    assert mvn_cdf(u, corr, seed=5) == mvn_cdf(u, corr, seed=5)


def test_rejects_nonpsd():
    bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    with pytest.raises(NumericalError):
        mvn_cdf([0.0, 0.0, 0.0], bad)


def test_rejects_shape_mismatch():
    with pytest.raises(ConfigurationError):
        mvn_cdf([0.0, 0.0], np.eye(3))


@settings(max_examples=40, deadline=None)
@given(
    upper=st.lists(st.floats(-3, 3), min_size=2, max_size=3),
    rho=st.floats(-0.45, 0.9),
    bump=st.floats(0.05, 2.0),
    data=st.data(),
)
def test_monotone_in_each_limit(upper, rho, bump, data):
    corr = equicorr(len(upper), rho)
    k = data.draw(st.integers(0, len(upper) - 1))
    raised = list(upper)
    raised[k] += bump
    # lattice error bound is 1e-6, so allow that much slack
    assert mvn_cdf(raised, corr) >= mvn_cdf(upper, corr) - 2e-6


# -- mvn_cdf_partial -----------------------------------------------------------


def test_partial_univariate():
    assert mvn_cdf_partial([0.0], [[1.0]], 0) == pytest.approx(PHI0, abs=1e-15)


@pytest.mark.parametrize("rho", [-0.7, 0.0, 0.6])
def test_partial_saturated_partner(rho):
    assert mvn_cdf_partial([0.0, 37.0], equicorr(2, rho), 0) == pytest.approx(PHI0, abs=1e-12)


def test_partial_independent():
    assert mvn_cdf_partial([0.0, 0.0], np.eye(2), 0) == pytest.approx(0.5 * PHI0, abs=1e-12)


def test_partial_matches_finite_difference():
    corr = equicorr(3, 0.4)
    u = np.array([0.2, -0.5, 0.7])
    h = 1e-3
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (mvn_cdf(u + e, corr, tol=1e-9) - mvn_cdf(u - e, corr, tol=1e-9)) / (2 * h)
        assert mvn_cdf_partial(u, corr, i) == pytest.approx(fd, abs=2e-5)


def test_partial_bad_index():
    with pytest.raises(ConfigurationError):
        mvn_cdf_partial([0.0, 0.0], np.eye(2), 2)


# -- gaussian_probit_integral --------------------------------------------------


def test_two_symmetric_classes():
    assert gaussian_probit_integral([0.0, 0.0], [0.7, 0.7], ProbitConfig(), 0) == pytest.approx(0.5)


def test_three_symmetric_classes():
    got = gaussian_probit_integral([0.0] * 3, [0.4] * 3, ProbitConfig(rho=0.5), 0)
    assert got == pytest.approx(1.0 / 3.0, abs=1e-6)


@pytest.mark.slow
def test_integral_against_sampled_expectation():
    cfg = ProbitConfig(math.sqrt(math.pi / 8), 0.5)
    mu, var = [1.0, 0.0, -1.0], [0.5, 0.5, 0.5]
    (val, se), _ = mc_probit_identity(mu, var, cfg, 0, 1, McConfig(1_000_000, 3))
    assert abs(gaussian_probit_integral(mu, var, cfg, 0) - val) <= 3 * se


def test_integral_rejects_nonfinite():
    with pytest.raises(ConfigurationError):
        gaussian_probit_integral([0.0, np.inf], [1.0, 1.0], ProbitConfig(), 0)
