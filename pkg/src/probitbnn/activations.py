"""Closed-form output moments for piecewise-linear and softmax activations.

The softmax moments rest on the probit surrogate

    s(z, j) = 1 / (1 + sum_{tau != j} exp(-(z_j - z_tau)))
            ~ Phi(lambda (z_j - z_tau), tau != j; 0, Sigma_0)

whose Gaussian expectation (and that of its partial derivatives) is again a
multivariate normal CDF. Only the first ``n - 1`` class outputs are modelled;
the last class is implicit (``1 - sum``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import CalibrationError, ConfigurationError
from .gauss import GaussianDiag, MomentTriple
from .mvn import (
    DEFAULT_LAMBDA,
    DEFAULT_RHO,
    ProbitConfig,
    bvn_cdf,
    default_probit_config,
    mvn_cdf,
    mvn_cdf_partial,
    probit_arguments,
)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class PwlParams:
    """``f(z) = max(alpha z, beta z)``; ReLU is ``(0, 1)``."""

    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and self.alpha <= self.beta):
            raise ConfigurationError(
                f"need 0 <= alpha <= 1 and alpha <= beta, got ({self.alpha}, {self.beta})"
            )

    def __call__(self, z):
        return np.maximum(self.alpha * z, self.beta * z)


RELU = PwlParams(0.0, 1.0)


def pwl_moments(z: GaussianDiag, p: PwlParams) -> MomentTriple:
    mu = z.mean
    sd = np.sqrt(z.var)
    e1 = mu
    e2 = mu * mu + z.var
    pos = sd > 0
    ratio = np.divide(mu, sd, out=np.zeros_like(mu), where=pos)
    ratio = np.clip(ratio, -40.0, 40.0)  # Phi and N are saturated well before this
    # sigma -> 0 limit: Phi(mu/sigma) -> step(mu), sigma * N(mu/sigma) -> 0
    cdf = np.where(pos, ndtr(ratio), np.where(mu > 0, 1.0, np.where(mu < 0, 0.0, 0.5)))
    pdf = np.where(pos, _INV_SQRT_2PI * np.exp(-0.5 * ratio * ratio), 0.0)
    a, b = p.alpha, p.beta
    mean_y = a * e1 + (b - a) * (e1 * cdf + sd * pdf)
    second = e2 * cdf + mu * sd * pdf
    var_y = a * a * e2 + (b * b - a * a) * second - mean_y**2
    cov_zy = a * e2 + (b - a) * second - mu * mean_y
    clamped = int(np.count_nonzero(var_y < 0))
    var_y = np.maximum(var_y, 0.0)
    return MomentTriple(mean_y, np.diag(var_y), np.diag(cov_zy), n_clamped=clamped)


@dataclass(frozen=True)
class SoftmaxDerivs:
    """``d[j, i] ~ E[d s(z, j) / d(z_j - z_i)]`` (``= E[y_i y_j]``), zero diagonal.

    Rows cover all ``n`` classes, including the implicit last one.
    """

    d: np.ndarray


def softmax_deriv_expectations(z: GaussianDiag, cfg: ProbitConfig | None = None) -> SoftmaxDerivs:
    n = len(z)
    if n < 2:
        raise ConfigurationError("softmax needs at least two logits")
    cfg = cfg or default_probit_config(n)
    lam = cfg.lambda_
    d = np.zeros((n, n))
    for j in range(n):
        upper, corr, scale = probit_arguments(z.mean, z.var, cfg, j)
        others = [t for t in range(n) if t != j]
        for p, i in enumerate(others):
            # chain rule through lambda (z_j - z_i), then the standardization
            d[j, i] = lam / scale[p] * mvn_cdf_partial(upper, corr, p, seed=cfg.seed)
    return SoftmaxDerivs(np.maximum(d, 0.0))


def softmax_moments(z: GaussianDiag, cfg: ProbitConfig | None = None) -> MomentTriple:
    """Mean, covariance and logit cross-covariance of the first ``n-1`` softmax outputs."""
    n = len(z)
    if n < 2:
        raise ConfigurationError("softmax needs at least two logits")
    cfg = cfg or default_probit_config(n)
    mean_y = np.empty(n - 1)
    for j in range(n - 1):
        upper, corr, _ = probit_arguments(z.mean, z.var, cfg, j)
        mean_y[j] = mvn_cdf(upper, corr, seed=cfg.seed)
    total = mean_y.sum()
    if total > 1.0:
        # only lattice integration error (<= 1e-6 per class) gets here
        mean_y /= total
    d = softmax_deriv_expectations(z, cfg).d
    k = n - 1
    dk = d[:k, :k]
    # E[y_i y_j] estimated from row j and row i; average keeps cov_y symmetric
    cross = 0.5 * (dk + dk.T)
    cov_y = cross - np.outer(mean_y, mean_y)
    diag = mean_y - mean_y**2 - d[:k].sum(axis=1)
    clamped = int(np.count_nonzero(diag < 0))
    cov_y[np.diag_indices(k)] = np.maximum(diag, 0.0)
    # cov_zy[i, j] = -var_i d[j, i] for i != j, var_j sum_i d[j, i] on the diagonal
    cov_zy = -z.var[:, None] * d[:k].T
    cov_zy[np.arange(k), np.arange(k)] = z.var[:k] * d[:k].sum(axis=1)
    return MomentTriple(mean_y, cov_y, cov_zy, n_clamped=clamped)


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# -- calibration -----------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(f, lo, hi, tol=1e-7, max_iter=200):
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo < tol:
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def default_grid(n, lo=-6.0, hi=6.0, points=11):
    axes = [np.linspace(lo, hi, points)] * (n - 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def probit_surrogate(theta, lam, rho, m, seed=None):
    """``Phi(lam * theta; 0, Sigma_0)`` row-wise for a shared ``rho``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if m == 1:
        return ndtr(lam * theta[:, 0])
    if m == 2:
        return bvn_cdf(lam * theta[:, 0], lam * theta[:, 1], rho)
    cfg = ProbitConfig(lam, rho)
    corr = cfg.rho_matrix(m)
    kw = {} if seed is None else {"seed": seed}
    return np.array([mvn_cdf(lam * t, corr, **kw) for t in theta])


def surrogate_mse(theta, lam, rho):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    exact = 1.0 / (1.0 + np.exp(-theta).sum(axis=1))
    approx = probit_surrogate(theta, lam, rho, theta.shape[1])
    return float(np.mean((approx - exact) ** 2))


def calibrate_probit(
    n,
    grid=None,
    lam_bounds=(0.05, 3.0),
    rho_bounds=(0.0, 0.95),
    max_sweeps=200,
    tol=1e-12,
) -> ProbitConfig:
    """Fit ``(lambda, shared rho)`` so the probit surrogate tracks the exact softmax.

    Coordinate descent with a golden-section search per coordinate, minimizing
    the mean squared error over the rows of ``grid`` (logit differences
    ``theta_tau = z_j - z_tau``). Starts from the defaults and never returns
    anything worse than them.
    """
    if n < 2:
        raise ConfigurationError("need at least two classes")
    theta = default_grid(n) if grid is None else np.atleast_2d(np.asarray(grid, float))
    if theta.shape[1] != n - 1:
        raise ConfigurationError(f"grid rows must have {n - 1} entries")
    m = n - 1
    lam, rho = DEFAULT_LAMBDA, DEFAULT_RHO
    best = surrogate_mse(theta, lam, rho)
    if best == 0.0:
        return ProbitConfig(lam, rho)
    lo_rho = max(rho_bounds[0], -1.0 / (m - 1) + 1e-6) if m > 1 else rho_bounds[0]
    for _ in range(max_sweeps):
        prev = best
        lam_new, f = _golden_section(lambda v: surrogate_mse(theta, v, rho), *lam_bounds)
        if f < best:
            lam, best = lam_new, f
        if m > 1:
            rho_new, f = _golden_section(
                lambda v: surrogate_mse(theta, lam, v), lo_rho, rho_bounds[1]
            )
            if f < best:
                rho, best = rho_new, f
        if prev - best <= tol * max(1.0, prev):
            return ProbitConfig(lam, rho)
    raise CalibrationError(
        f"no convergence after {max_sweeps} sweeps", best=ProbitConfig(lam, rho)
    )
