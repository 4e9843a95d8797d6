"""Gaussian containers, linear moment propagation and joint-Gaussian conditioning.

Conventions: vectors are 1-d arrays and treated as column vectors in every
formula, so the innovation ``y_obs - mean_y`` is a column and the
cross-covariance ``cov_zy`` has rows indexed by ``z`` and columns by ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from .errors import ConfigurationError, NumericalError

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal inflation ladder used when a Cholesky factorization fails."""

    start: float = 1e-12
    stop: float = 1e-6
    factor: float = 10.0
    # eigenvalues above -psd_tol * max(1, |m|) count as a (singular) PSD matrix
    psd_tol: float = 1e-14

    def ladder(self):
        eps = self.start
        while eps <= self.stop * (1 + 1e-9):
            yield eps
            eps *= self.factor


DEFAULT_JITTER = JitterPolicy()


def _as_vector(x, name):
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ConfigurationError(f"{name} must be a vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class GaussianDiag:
    """Independent Gaussian coordinates: ``mean`` and per-coordinate ``var``."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        var = _as_vector(self.var, "var")
        if mean.shape != var.shape:
            raise ConfigurationError(
                f"mean and var differ in length ({mean.size} vs {var.size})"
            )
        if np.any(var < 0):
            raise ConfigurationError("variances must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def cov(self):
        return np.diag(self.var)

    def __len__(self):
        return self.mean.size


@dataclass(frozen=True)
class GaussianFull:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ConfigurationError(f"cov shape {cov.shape} does not match mean")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=SYMMETRY_TOL):
            raise ConfigurationError("cov is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def var(self):
        return np.diag(self.cov).copy()


@dataclass(frozen=True)
class WeightPosterior:
    """Gaussian over one neuron's incoming weight column (bias last, if folded)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ConfigurationError(f"cov shape {cov.shape} does not match mean")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=SYMMETRY_TOL):
            raise ConfigurationError("weight covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class MomentTriple:
    """Output moments of one layer: ``mean_y``, ``cov_y`` and ``cov_zy``.

    ``n_clamped`` counts diagonal entries of ``cov_y`` that came out negative
    and were clamped to zero.
    """

    mean_y: np.ndarray
    cov_y: np.ndarray
    cov_zy: np.ndarray
    n_clamped: int = field(default=0, compare=False)


def linear_propagate(x, weights: Sequence[WeightPosterior]) -> GaussianDiag:
    """Pre-activation moments of ``z_j = x . w_j`` for independent weight columns.

    ``x`` is the (already augmented) layer input. Cross terms between
    distinct neurons are zero, so only the per-neuron variances are returned.
    """
    x = _as_vector(x, "input")
    if len(weights) == 0:
        raise ConfigurationError("at least one weight posterior is required")
    for w in weights:
        if w.dim != x.size:
            raise ConfigurationError(
                f"input width {x.size} does not match posterior dimension {w.dim}"
            )
    means = np.stack([w.mean for w in weights])
    covs = np.stack([w.cov for w in weights])
    mean = means @ x
    var = np.einsum("i,jik,k->j", x, covs, x)
    # a PSD quadratic form can round to -tiny
    return GaussianDiag(mean, np.maximum(var, 0.0))


def _symmetrize(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + m.T)


def ensure_psd(m, policy: JitterPolicy = DEFAULT_JITTER, return_jitter=False):
    """Return a symmetric PSD version of ``m``.

    Already-PSD input (including singular PSD) comes back symmetrized and
    otherwise untouched. Otherwise ``eps * I`` is added for ``eps`` on the
    jitter ladder until a Cholesky factorization succeeds. A matrix that is
    genuinely indefinite beyond the ladder raises :class:`NumericalError`.

    With ``return_jitter=True`` the applied ``eps`` (0.0 if none) is returned
    alongside the matrix.
    """
    s = _symmetrize(m)
    jitter = 0.0
    out = s
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(s)
        scale = max(1.0, float(np.max(np.abs(eig))) if eig.size else 1.0)
        if eig.size and eig[0] < -policy.psd_tol * scale:
            eye = np.eye(s.shape[0])
            for eps in policy.ladder():
                try:
                    np.linalg.cholesky(s + eps * eye)
                except np.linalg.LinAlgError:
                    continue
                jitter = eps
                out = s + eps * eye
                break
            else:
                raise NumericalError(
                    f"matrix is indefinite (min eigenvalue {eig[0]:.3e}) "
                    f"beyond jitter {policy.stop:g}",
                    condition=float(np.abs(eig).max() / max(abs(eig[0]), 1e-300)),
                )
    if return_jitter:
        return out, jitter
    return out


def jittered_cholesky(a, policy):
    """Cholesky of ``a`` with the jitter ladder; returns ``(L, eps)``."""
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(a.shape[0])
    for eps in policy.ladder():
        try:
            return np.linalg.cholesky(a + eps * eye), eps
        except np.linalg.LinAlgError:
            continue
    eig = np.linalg.eigvalsh(a)
    cond = float(np.abs(eig).max() / max(np.abs(eig).min(), 1e-300))
    raise NumericalError(
        f"output covariance not factorizable (condition estimate {cond:.3e})",
        condition=cond,
    )


RESIDUAL_FLOOR = 1e-2


def coherent_output_cov(z_var, cov_zy, cov_y, floor=RESIDUAL_FLOOR):
    """Lift ``cov_y`` just enough that the joint ``(z, y)`` covariance is valid.

    Approximate moments need not be mutually consistent. Writing
    ``y = mu_y + B (z - mu_z) + e`` with ``B = Sigma_zy^T Sigma_z^{-1}``, the
    residual covariance ``Sigma_y - B Sigma_z B^T`` must be PSD. Its
    eigenvalues are raised to at least ``floor``; ``Sigma_z`` and
    ``Sigma_zy`` are left alone, so conditioning can only shrink ``Sigma_z``.

    Returns ``(cov_y, lifted)`` where ``lifted`` counts raised eigenvalues.
    """
    z_var = np.maximum(np.asarray(z_var, dtype=float), 1e-300)
    cov_zy = np.asarray(cov_zy, dtype=float)
    explained = _symmetrize(cov_zy.T @ (cov_zy / z_var[:, None]))
    resid = _symmetrize(np.asarray(cov_y, dtype=float)) - explained
    w, v = np.linalg.eigh(resid)
    low = w < floor
    if not low.any():
        return _symmetrize(np.asarray(cov_y, dtype=float)), 0
    w = np.where(low, floor, w)
    return _symmetrize(explained + (v * w) @ v.T), int(low.sum())


def condition_joint(
    z: GaussianDiag,
    moments: MomentTriple,
    observed_y,
    observed_cov=None,
    policy: JitterPolicy = DEFAULT_JITTER,
    return_jitter=False,
    residual_floor=RESIDUAL_FLOOR,
) -> GaussianFull:
    """Condition ``z`` on an observation of ``y`` under a joint Gaussian model.

    ``mean = mu_z + K (y_obs - mu_y)`` and ``cov = Sigma_z - K Sigma_zy^T`` with
    gain ``K = Sigma_zy Sigma_y^{-1}``; the solve goes through a jittered
    Cholesky factor rather than an explicit inverse.

    ``observed_cov`` lets the observation itself be uncertain (a Gaussian
    pseudo-target with that covariance); the extra ``K R K^T`` term is then
    added back. ``None`` means ``y`` was observed exactly.

    Before the solve ``cov_y`` is passed through :func:`coherent_output_cov`
    (skipped when ``residual_floor`` is ``None``).
    """
    y = _as_vector(observed_y, "observed_y")
    mu_y = np.asarray(moments.mean_y, dtype=float)
    cov_y = _symmetrize(moments.cov_y)
    cov_zy = np.asarray(moments.cov_zy, dtype=float)
    n, m = len(z), mu_y.size
    if y.size != m or cov_y.shape != (m, m) or cov_zy.shape != (n, m):
        raise ConfigurationError(
            f"inconsistent shapes: z {n}, y {m}, observed {y.size}, "
            f"cov_y {cov_y.shape}, cov_zy {cov_zy.shape}"
        )
    if residual_floor is not None:
        cov_y, _ = coherent_output_cov(z.var, cov_zy, cov_y, residual_floor)
    chol, eps = jittered_cholesky(cov_y, policy)
    # K^T = Sigma_y^{-1} Sigma_zy^T
    gain_t = cho_solve((chol, True), cov_zy.T)
    gain = gain_t.T
    mean = z.mean + gain @ (y - mu_y)
    cov = z.cov - gain @ cov_zy.T
    if observed_cov is not None:
        r = np.asarray(observed_cov, dtype=float)
        if r.shape != (m, m):
            raise ConfigurationError(f"observed_cov shape {r.shape} != {(m, m)}")
        cov = cov + gain @ r @ gain.T
    cov, eps_out = ensure_psd(cov, policy, return_jitter=True)
    out = GaussianFull(mean, cov)
    if return_jitter:
        return out, max(eps, eps_out)
    return out

