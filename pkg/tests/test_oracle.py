import numpy as np
import pytest

from probitbnn.activations import PwlParams, softmax
from probitbnn.errors import ConfigurationError
from probitbnn.mvn import ProbitConfig
from probitbnn.oracle import (
    McConfig,
    chunk_rng,
    mc_probit_identity,
    mc_pwl_moments,
    mc_softmax_moments,
)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        McConfig(samples=0)


def test_reproducible():
    a, ea = mc_softmax_moments([0.5, -0.2, 0.1], [1.0, 0.5, 2.0], McConfig(50_000, 3))
    b, eb = mc_softmax_moments([0.5, -0.2, 0.1], [1.0, 0.5, 2.0], McConfig(50_000, 3))
    assert np.array_equal(a.mean_y, b.mean_y) and np.array_equal(a.cov_y, b.cov_y)
    assert np.array_equal(ea.cov_zy, eb.cov_zy)


def test_chunks_are_independent_streams():
    x = chunk_rng(1, 0).standard_normal(4)
    y = chunk_rng(1, 1).standard_normal(4)
    z = chunk_rng(2, 0).standard_normal(4)
    assert not np.array_equal(x, y) and not np.array_equal(x, z)
    np.testing.assert_array_equal(x, chunk_rng(1, 0).standard_normal(4))


def test_deterministic_input():
    mu = np.array([1.0, 0.0, -1.0])
    m, err = mc_softmax_moments(mu, [0.0, 0.0, 0.0], McConfig(1000, 0))
    np.testing.assert_allclose(m.mean_y, softmax(mu)[:2], atol=1e-15)
    np.testing.assert_allclose(m.cov_y, 0.0, atol=1e-15)
    np.testing.assert_allclose(err.mean_y, 0.0, atol=1e-15)


def test_two_class_symmetry():
    m, err = mc_softmax_moments([0.0, 0.0], [1.0, 1.0], McConfig(1_000_000, 8))
    assert abs(m.mean_y[0] - 0.5) <= 3 * err.mean_y[0]


def test_linear_activation_moments():
    m, err = mc_pwl_moments([0.7], [2.0], PwlParams(1.0, 1.0), McConfig(200_000, 2))
    assert abs(m.mean_y[0] - 0.7) <= 3 * err.mean_y[0]
    # y = z exactly, so both covariances are the same sample estimate
    assert m.cov_y[0, 0] == pytest.approx(m.cov_zy[0, 0], rel=1e-12)


@pytest.mark.slow
def test_half_gaussian_mean():
    m, err = mc_pwl_moments([0.0], [1.0], PwlParams(0.0, 1.0), McConfig(10_000_000, 4))
    assert abs(m.mean_y[0] - 1 / np.sqrt(2 * np.pi)) <= 3 * err.mean_y[0]


def test_standard_error_scaling():
    mu, var = [0.3, -0.3, 0.0], [1.0, 1.0, 1.0]
    _, small = mc_softmax_moments(mu, var, McConfig(10_000, 1))
    _, large = mc_softmax_moments(mu, var, McConfig(1_000_000, 1))
    ratio = small.mean_y / large.mean_y
    assert np.all((ratio > 5) & (ratio < 20))  # ideal factor is 10


def test_identity_estimator_shapes():
    (v, se_v), (d, se_d) = mc_probit_identity(
        [0.2, -0.1, 0.4, 0.0], [0.5, 1.0, 0.3, 0.8], ProbitConfig(0.6, 0.4), 1, 3, McConfig(20_000, 0)
    )
    assert 0 <= v <= 1 and d >= 0 and se_v > 0 and se_d > 0


def test_identity_estimator_rejects_large_n():
    with pytest.raises(ConfigurationError):
        mc_probit_identity([0.0] * 5, [1.0] * 5, ProbitConfig(), 0, 1, McConfig(10, 0))
