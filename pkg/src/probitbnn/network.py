"""Bayesian fully connected network: moment forward pass and sequential updates.

Every neuron ``j`` of layer ``l`` owns an independent Gaussian over its
incoming weight column (bias folded in as the last entry when the layer has
one). Training is assumed density filtering: each instance conditions the
output pre-activations on the observed one-hot label and maps the change
back onto the weight posteriors in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from .activations import PwlParams, pwl_moments, softmax_moments
from .errors import ConfigurationError, NumericalError
from .gauss import (
    DEFAULT_JITTER,
    RESIDUAL_FLOOR,
    GaussianDiag,
    GaussianFull,
    MomentTriple,
    WeightPosterior,
    condition_joint,
    ensure_psd,
    jittered_cholesky,
    linear_propagate,
)
from .mvn import ProbitConfig, default_probit_config

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
TIE_TOL = 1e-12
SOFTMAX = "softmax"


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: PwlParams | str = SOFTMAX
    bias: bool = True

    def __post_init__(self):
        if self.width < 1:
            raise ConfigurationError(f"layer width must be positive, got {self.width}")
        if not (isinstance(self.activation, PwlParams) or self.activation == SOFTMAX):
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def is_softmax(self):
        return not isinstance(self.activation, PwlParams)


def augment(y, bias):
    """Append the constant-1 bias input along the last axis."""
    y = np.asarray(y, dtype=float)
    if not bias:
        return y
    ones = np.ones(y.shape[:-1] + (1,))
    return np.concatenate([y, ones], axis=-1)


@dataclass(frozen=True)
class NetworkState:
    layers: tuple[LayerSpec, ...]
    posteriors: tuple[tuple[WeightPosterior, ...], ...]
    probit_cfg: ProbitConfig | None = None
    step_count: int = 0

    def __post_init__(self):
        layers = tuple(self.layers)
        posts = tuple(tuple(p) for p in self.posteriors)
        if not layers:
            raise ConfigurationError("network needs at least one layer")
        if len(posts) != len(layers):
            raise ConfigurationError("one posterior list per layer is required")
        for k, spec in enumerate(layers):
            if spec.is_softmax != (k == len(layers) - 1):
                raise ConfigurationError("softmax must be (only) the last layer")
        if layers[-1].width < 2:
            raise ConfigurationError("softmax layer needs at least two classes")
        width = None
        for k, (spec, post) in enumerate(zip(layers, posts)):
            if len(post) != spec.width:
                raise ConfigurationError(
                    f"layer {k}: {len(post)} posteriors for width {spec.width}"
                )
            dims = {w.dim for w in post}
            if len(dims) != 1:
                raise ConfigurationError(f"layer {k}: posteriors differ in dimension")
            fan_in = dims.pop() - int(spec.bias)
            if fan_in < 1 or (width is not None and fan_in != width):
                raise ConfigurationError(
                    f"layer {k}: fan-in {fan_in} does not match previous width {width}"
                )
            width = spec.width
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "posteriors", posts)
        if self.probit_cfg is None:
            object.__setattr__(self, "probit_cfg", default_probit_config(layers[-1].width))

    @property
    def input_width(self):
        return self.posteriors[0][0].dim - int(self.layers[0].bias)

    @property
    def n_classes(self):
        return self.layers[-1].width

    def layer_means(self, k):
        return np.stack([w.mean for w in self.posteriors[k]])


def init_network(
    input_width,
    layers: Sequence[LayerSpec],
    prior_var=1.0,
    seed=0,
    probit_cfg=None,
) -> NetworkState:
    """Prior with ``N(0, 1/fan_in)`` random means and ``prior_var * I`` covariances.

    Random means break the symmetry between hidden units; with all-zero means
    every hidden neuron would receive identical updates.
    """
    rng = np.random.default_rng(seed)
    posts = []
    width = input_width
    for spec in layers:
        dim = width + int(spec.bias)
        layer = []
        for _ in range(spec.width):
            mean = rng.normal(0.0, 1.0 / np.sqrt(width), size=dim)
            layer.append(WeightPosterior(mean, prior_var * np.eye(dim)))
        posts.append(tuple(layer))
        width = spec.width
    return NetworkState(tuple(layers), tuple(posts), probit_cfg)


@dataclass(frozen=True)
class LayerTrace:
    inputs: np.ndarray  # augmented layer input used in the linear map
    z: GaussianDiag
    moments: MomentTriple
    output: np.ndarray  # point value passed on: the output mean


def forward(net: NetworkState, x) -> tuple[LayerTrace, ...]:
    """Moment forward pass; hidden layers pass their output mean onward."""
    y = np.asarray(x, dtype=float)
    if y.ndim != 1 or y.size != net.input_width:
        raise ConfigurationError(
            f"input must be a vector of length {net.input_width}, got shape {y.shape}"
        )
    trace = []
    for spec, post in zip(net.layers, net.posteriors):
        inputs = augment(y, spec.bias)
        z = linear_propagate(inputs, post)
        if spec.is_softmax:
            moments = softmax_moments(z, net.probit_cfg)
        else:
            moments = pwl_moments(z, spec.activation)
        y = moments.mean_y
        trace.append(LayerTrace(inputs, z, moments, y))
    return tuple(trace)


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray  # all N classes, the implicit last one appended
    cov: np.ndarray  # covariance of the first N-1 outputs
    label: int  # 0-based argmax, lowest index on ties (within TIE_TOL)


def predict(net: NetworkState, x) -> Prediction:
    out = forward(net, x)[-1].moments
    probs = np.append(out.mean_y, max(0.0, 1.0 - out.mean_y.sum()))
    # rounding in the implicit class must not break exact ties
    label = int(np.flatnonzero(probs >= probs.max() - TIE_TOL)[0])
    return Prediction(probs, out.cov_y, label)


def encode_label(label, n_classes):
    """0-based class index -> length ``n-1`` target; the last class is all zeros."""
    if not 0 <= label < n_classes:
        raise ConfigurationError(f"label {label} out of range for {n_classes} classes")
    y = np.zeros(n_classes - 1)
    if label < n_classes - 1:
        y[label] = 1.0
    return y


def decode_label(y):
    y = np.asarray(y)
    hits = np.flatnonzero(y)
    return int(hits[0]) if hits.size else y.size


@dataclass
class TrainingReport:
    """Mutable collector for per-instance diagnostics."""

    applied: int = 0
    skipped: list = field(default_factory=list)
    jitter_events: int = 0
    clamped_variances: int = 0

    def as_dict(self):
        return {
            "applied": self.applied,
            "skipped": [{"index": i, "reason": r} for i, r in self.skipped],
            "jitter_events": self.jitter_events,
            "clamped_variances": self.clamped_variances,
        }


def _update_layer(post, inputs, z: GaussianDiag, z_post: GaussianFull, note_jitter):
    """Map the conditioned pre-activations back onto each weight column."""
    new = []
    target_var = z_post.var
    for j, w in enumerate(post):
        g = w.cov @ inputs  # Cov(w_j, z_j)
        s2 = max(z.var[j], VAR_FLOOR)
        mean = w.mean + g * (z_post.mean[j] - z.mean[j]) / s2
        cov = w.cov + np.outer(g, g) * (target_var[j] - z.var[j]) / (s2 * s2)
        cov, eps = ensure_psd(cov, DEFAULT_JITTER, return_jitter=True)
        note_jitter(eps)
        new.append(WeightPosterior(mean, cov))
    return tuple(new)


def _pseudo_target(prev: LayerTrace, means, z, z_post, note_jitter):
    """Push the conditioned ``z^l`` back to a Gaussian target for ``y^(l-1)``.

    Treats ``y^(l-1) ~ N(mean_y, cov_y)`` and ``z^l = [y, 1] W`` with the
    weights at their prior means, so ``Cov(y, z) = cov_y M^T`` and
    ``Cov(z) = diag(var_z) + M cov_y M^T``. The result is the smoothed mean and
    covariance of ``y^(l-1)`` given the filtered ``z^l``.
    """
    m = means[:, : prev.moments.mean_y.size]
    cov_y = prev.moments.cov_y
    c = cov_y @ m.T
    s = np.diag(z.var) + m @ cov_y @ m.T
    chol, eps = jittered_cholesky(0.5 * (s + s.T), DEFAULT_JITTER)
    note_jitter(eps)
    gain = cho_solve((chol, True), c.T).T
    mean = prev.moments.mean_y + gain @ (z_post.mean - z.mean)
    cov = cov_y - gain @ c.T + gain @ z_post.cov @ gain.T
    cov, eps = ensure_psd(cov, DEFAULT_JITTER, return_jitter=True)
    note_jitter(eps)
    return mean, cov


def backward_update(net: NetworkState, x, y_obs, report: TrainingReport | None = None,
                    index=None, residual_floor=RESIDUAL_FLOOR) -> NetworkState:
    """Condition the network on one labelled instance and return the new state.

    ``y_obs`` is the length ``N-1`` one-hot target (all zeros for the last
    class). Hidden layers are updated through Gaussian pseudo-targets built
    from the layer above. A numerical failure leaves ``net`` untouched and is
    recorded in ``report``.

    ``residual_floor`` is forwarded to :func:`condition_joint`; ``None`` runs
    the unrepaired conditioning step.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    n_out = net.n_classes - 1
    if y_obs.shape != (n_out,):
        raise ConfigurationError(f"target must have length {n_out}")
    if not (np.all((y_obs == 0) | (y_obs == 1)) and y_obs.sum() <= 1):
        raise ConfigurationError("target must be one-hot or all zeros")

    jitters = []
    note = lambda eps: jitters.append(eps) if eps > 0 else None  # noqa: E731
    trace = forward(net, x)
    target, target_cov = y_obs, None
    new_posts = list(net.posteriors)
    try:
        for k in range(len(net.layers) - 1, -1, -1):
            t = trace[k]
            z_post, eps = condition_joint(
                t.z, t.moments, target, target_cov, return_jitter=True,
                residual_floor=residual_floor,
            )
            note(eps)
            if k > 0:
                target, target_cov = _pseudo_target(
                    trace[k - 1], net.layer_means(k), t.z, z_post, note
                )
            new_posts[k] = _update_layer(net.posteriors[k], t.inputs, t.z, z_post, note)
    except NumericalError as exc:
        log.warning("skipping instance %s: %s", index, exc)
        if report is not None:
            report.skipped.append((index, str(exc)))
        return net
    if report is not None:
        report.applied += 1
        report.jitter_events += len(jitters)
        report.clamped_variances += sum(t.moments.n_clamped for t in trace)
    return replace(net, posteriors=tuple(new_posts), step_count=net.step_count + 1)


def train(net: NetworkState, data, report: TrainingReport | None = None,
          callback=None, residual_floor=RESIDUAL_FLOOR) -> NetworkState:
    """Sequentially fold :func:`backward_update` over ``(x, y)`` pairs in order.

    ``callback(step, state)`` is invoked after every instance (skipped ones
    included), with ``step`` counting instances seen.
    """
    for k, (x, y) in enumerate(data):
        net = backward_update(net, x, y, report, index=k, residual_floor=residual_floor)
        if callback is not None:
            callback(k + 1, net)
    return net
