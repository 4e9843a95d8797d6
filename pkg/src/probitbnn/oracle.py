"""Monte Carlo reference estimates for the closed-form moments.

Test-side only; nothing in the training path imports this module.

Random streams are Philox generators keyed by ``(seed, chunk index)`` with a
fixed chunk size, so any chunk can be drawn independently and the merged
result does not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .activations import PwlParams, softmax
from .errors import ConfigurationError
from .gauss import MomentTriple
from .mvn import ProbitConfig, bvn_cdf

CHUNK = 1 << 18


@dataclass(frozen=True)
class McConfig:
    samples: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigurationError("samples must be >= 1")


def chunk_rng(seed, chunk):
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, chunk], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunks(cfg: McConfig):
    done, c = 0, 0
    while done < cfg.samples:
        size = min(CHUNK, cfg.samples - done)
        yield chunk_rng(cfg.seed, c), size
        done += size
        c += 1


class _Moments:
    """Collects paired sample blocks ``(a, b)``; moments are taken in one pass at the end."""

    def __init__(self):
        self.blocks = []

    def add(self, a, b):
        self.blocks.append((a, b))

    def finish(self):
        a = np.concatenate([x for x, _ in self.blocks])
        b = np.concatenate([y for _, y in self.blocks])
        n = a.shape[0]
        ma, mb = a.mean(0), b.mean(0)
        ca, cb = a - ma, b - mb
        cov_bb = cb.T @ cb / n
        cov_ab = ca.T @ cb / n
        se_mb = b.std(0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mb)
        if n > 1:
            se_bb = np.sqrt(np.einsum("ki,kj->ij", cb**2, cb**2) / n - cov_bb**2) / math.sqrt(n)
            se_ab = np.sqrt(np.einsum("ki,kj->ij", ca**2, cb**2) / n - cov_ab**2) / math.sqrt(n)
        else:
            se_bb, se_ab = np.zeros_like(cov_bb), np.zeros_like(cov_ab)
        return ma, mb, cov_bb, cov_ab, se_mb, np.nan_to_num(se_bb), np.nan_to_num(se_ab)


@dataclass(frozen=True)
class McError:
    """Standard errors matching the fields of a :class:`MomentTriple`."""

    mean_y: np.ndarray
    cov_y: np.ndarray
    cov_zy: np.ndarray


def _sample_z(mu, var, cfg):
    mu = np.asarray(mu, dtype=float)
    sd = np.sqrt(np.asarray(var, dtype=float))
    for rng, size in _chunks(cfg):
        yield mu + sd * rng.standard_normal((size, mu.size))


def mc_softmax_moments(mu_z, var_z, cfg: McConfig = McConfig()):
    """Empirical moments of the first ``n-1`` exact softmax outputs."""
    mu_z = np.asarray(mu_z, dtype=float)
    acc = _Moments()
    for z in _sample_z(mu_z, var_z, cfg):
        acc.add(z, softmax(z)[:, :-1])
    _, my, cyy, czy, se_m, se_yy, se_zy = acc.finish()
    return MomentTriple(my, cyy, czy), McError(se_m, se_yy, se_zy)


def mc_pwl_moments(mu_z, var_z, p: PwlParams, cfg: McConfig = McConfig()):
    mu_z = np.atleast_1d(np.asarray(mu_z, dtype=float))
    acc = _Moments()
    for z in _sample_z(mu_z, np.atleast_1d(var_z), cfg):
        acc.add(z, p(z))
    _, my, cyy, czy, se_m, se_yy, se_zy = acc.finish()
    # cross terms between distinct coordinates are independent noise; keep diagonals
    cyy, czy = np.diag(np.diag(cyy)), np.diag(np.diag(czy))
    return MomentTriple(my, cyy, czy), McError(se_m, np.diag(se_yy), np.diag(se_zy))


def _sqrt_psd(cov):
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def mc_forward(net, x, cfg: McConfig = McConfig()):
    """Empirical output mean/covariance of a network with sampled weights.

    Every sample draws all weight columns from their posteriors and pushes
    ``x`` through the exact activations (no moment approximations, and the
    hidden outputs stay random). Returns ``(mean, cov, se_mean)`` for the
    first ``N-1`` softmax outputs.
    """
    from .network import augment

    x = np.asarray(x, dtype=float)
    roots = [
        [_sqrt_psd(w.cov) for w in layer] for layer in net.posteriors
    ]
    outs = []
    for rng, size in _chunks(cfg):
        h = np.broadcast_to(x, (size, x.size))
        for spec, layer, root in zip(net.layers, net.posteriors, roots):
            inp = augment(h, spec.bias)
            z = np.empty((size, len(layer)))
            for j, (w, r) in enumerate(zip(layer, root)):
                wj = w.mean + rng.standard_normal((size, w.dim)) @ r.T
                z[:, j] = np.einsum("ki,ki->k", inp, wj)
            h = softmax(z) if spec.is_softmax else spec.activation(z)
        outs.append(h[:, :-1])
    y = np.concatenate(outs)
    mean = y.mean(0)
    cov = np.cov(y.T, bias=True).reshape(mean.size, mean.size)
    se = y.std(0, ddof=1) / math.sqrt(y.shape[0]) if y.shape[0] > 1 else np.zeros_like(mean)
    return mean, cov, se


def _probit_rows(x, corr):
    """Row-wise ``Phi(x; 0, corr)`` for dimension <= 2."""
    if x.shape[1] == 1:
        return ndtr(x[:, 0])
    return bvn_cdf(x[:, 0], x[:, 1], corr[0, 1])


def mc_probit_identity(mu_z, var_z, pcfg: ProbitConfig, j, i, cfg: McConfig = McConfig()):
    """MC estimates of the two Gaussian-expectation identities for class ``j``.

    Returns ``((mean_value, se_value), (mean_deriv, se_deriv))`` where

    * value: ``E_z[Phi(lambda (z_j - z_tau), tau != j; 0, Sigma_0)]``
    * deriv: ``E_z[d Phi(lambda (z_j - z_tau); 0, Sigma_0) / d lambda (z_j - z_i)]``

    Each integrand is evaluated exactly per sample for up to two difference
    variables. With three, the first base coordinate ``u_1`` is sampled as
    well and the other two are integrated conditionally, which keeps the
    estimator unbiased without calling the lattice CDF per sample.
    """
    mu = np.asarray(mu_z, dtype=float)
    n = mu.size
    m = n - 1
    if m > 3:
        raise ConfigurationError("oracle supports at most four classes")
    base = pcfg.rho_matrix(m)
    others = [t for t in range(n) if t != j]
    p = others.index(i)
    lam = pcfg.lambda_
    vals, ders = [], []
    for k, z in enumerate(_sample_z(mu, var_z, cfg)):
        x = lam * (z[:, [j]] - z[:, others])
        # value
        if m <= 2:
            vals.append(_probit_rows(x, base))
        else:
            rng = chunk_rng(cfg.seed ^ 0x5EED, k)
            u1 = rng.standard_normal(x.shape[0])
            rest = [1, 2]
            slope = base[rest, 0]
            cov = base[np.ix_(rest, rest)] - np.outer(slope, slope)
            sd = np.sqrt(np.diag(cov))
            cc = cov[0, 1] / (sd[0] * sd[1])
            lim = (x[:, rest] - u1[:, None] * slope) / sd
            vals.append((u1 <= x[:, 0]) * bvn_cdf(lim[:, 0], lim[:, 1], cc))
        # derivative: phi(x_p) * P(rest <= x_rest | u_p = x_p)
        xp = x[:, p]
        dens = np.exp(-0.5 * xp * xp) / math.sqrt(2 * math.pi)
        if m == 1:
            ders.append(dens)
            continue
        rest = [t for t in range(m) if t != p]
        slope = base[rest, p]
        cov = base[np.ix_(rest, rest)] - np.outer(slope, slope)
        sd = np.sqrt(np.diag(cov))
        lim = (x[:, rest] - xp[:, None] * slope) / sd
        if m == 2:
            ders.append(dens * ndtr(lim[:, 0]))
        else:
            ders.append(dens * bvn_cdf(lim[:, 0], lim[:, 1], cov[0, 1] / (sd[0] * sd[1])))
    v = np.concatenate(vals)
    d = np.concatenate(ders)
    root = math.sqrt(v.size)
    return (v.mean(), v.std(ddof=1) / root), (d.mean(), d.std(ddof=1) / root)


__all__ = [
    "McConfig",
    "McError",
    "chunk_rng",
    "mc_forward",
    "mc_probit_identity",
    "mc_pwl_moments",
    "mc_softmax_moments",
]
