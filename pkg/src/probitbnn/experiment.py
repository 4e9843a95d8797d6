"""Synthetic three-class wedge experiment, grid export and checkpoint I/O.

Random numbers come from numpy's ``Generator(PCG64(seed))``: inputs are
``uniform(low, high)`` draws, x1 then x2 per point, in a single stream.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .activations import PwlParams
from .errors import CheckpointError, ConfigurationError
from .gauss import WeightPosterior
from .mvn import ProbitConfig
from .network import (
    SOFTMAX,
    LayerSpec,
    NetworkState,
    TrainingReport,
    decode_label,
    init_network,
    predict,
    train,
)

CHECKPOINT_VERSION = 1
GRID_HEADER = ("x1", "x2", "mu_y1", "mu_y2", "var_y1", "var_y2")


def wedge_label(x):
    """Three-class wedge labels as ``N-1 = 2`` targets.

    ``[1, 0]`` above both diagonals, ``[0, 1]`` below both, ``[0, 0]``
    otherwise (including points exactly on a diagonal).
    """
    x1, x2 = float(x[0]), float(x[1])
    s, t = x1 + x2, -x1 + x2
    if s > 0 and t > 0:
        return np.array([1.0, 0.0])
    if s < 0 and t < 0:
        return np.array([0.0, 1.0])
    return np.array([0.0, 0.0])


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (m, d)
    y: np.ndarray  # (m, N-1) one-hot, all-zero row for the last class

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or y.ndim != 2:
            raise ConfigurationError("x and y must be 2-d arrays")
        if x.shape[0] != y.shape[0]:
            raise ConfigurationError("x and y row counts differ")
        if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) <= 1)):
            raise ConfigurationError("labels must be one-hot or all-zero rows")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.shape[0]

    def __iter__(self):
        return zip(self.x, self.y)

    @property
    def labels(self):
        return np.array([decode_label(r) for r in self.y], dtype=int)


@dataclass
class ExperimentConfig:
    m: int = 25
    bounds: tuple = (-2.0, 2.0, -2.0, 2.0)  # x1_lo, x1_hi, x2_lo, x2_hi
    seed: int = 42
    snapshot_schedule: tuple = (0, 12, 25)
    grid_resolution: int = 41
    network: dict = field(default_factory=lambda: {"preset": "wedge"})

    def __post_init__(self):
        lo1, hi1, lo2, hi2 = self.bounds
        if not (lo1 < hi1 and lo2 < hi2):
            raise ConfigurationError(f"invalid bounds {self.bounds}")
        if self.m < 0:
            raise ConfigurationError("m must be non-negative")
        if self.grid_resolution < 2:
            raise ConfigurationError("grid_resolution must be >= 2")
        if any(s < 0 or s > self.m for s in self.snapshot_schedule):
            raise ConfigurationError("snapshot steps must lie in [0, m]")
        self.bounds = tuple(float(b) for b in self.bounds)
        self.snapshot_schedule = tuple(sorted(set(int(s) for s in self.snapshot_schedule)))

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def gen_data(cfg: ExperimentConfig, labeler: Callable = wedge_label) -> Dataset:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    lo1, hi1, lo2, hi2 = cfg.bounds
    x = np.empty((cfg.m, 2))
    for k in range(cfg.m):
        x[k, 0] = rng.uniform(lo1, hi1)
        x[k, 1] = rng.uniform(lo2, hi2)
    y = np.array([labeler(p) for p in x]) if cfg.m else np.zeros((0, 2))
    return Dataset(x, y)


def wedge_network() -> NetworkState:
    """Single softmax layer, no bias, weight means e1, e2, (1, 1) with identity covariances."""
    means = ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
    post = tuple(WeightPosterior(np.array(m), np.eye(2)) for m in means)
    return NetworkState((LayerSpec(3, SOFTMAX, bias=False),), (post,))


def build_network(spec: dict) -> NetworkState:
    """Network from a JSON-style description.

    ``{"preset": "wedge"}`` or ``{"input_width": d, "layers": [{"width": ..,
    "activation": "relu" | "softmax" | {"alpha": a, "beta": b}, "bias": ..}],
    "prior_var": 1.0, "seed": 0, "lambda": .., "rho": ..}``.
    """
    if spec.get("preset") == "wedge":
        net = wedge_network()
    else:
        layers = []
        for entry in spec["layers"]:
            act = entry.get("activation", SOFTMAX)
            if act == "relu":
                act = PwlParams(0.0, 1.0)
            elif isinstance(act, dict):
                act = PwlParams(act["alpha"], act["beta"])
            layers.append(LayerSpec(entry["width"], act, entry.get("bias", True)))
        net = init_network(spec["input_width"], layers, spec.get("prior_var", 1.0),
                           spec.get("seed", 0))
    if "lambda" in spec or "rho" in spec:
        cfg = ProbitConfig(spec.get("lambda", net.probit_cfg.lambda_),
                           spec.get("rho", net.probit_cfg.rho))
        net = NetworkState(net.layers, net.posteriors, cfg, net.step_count)
    return net


# -- grids -----------------------------------------------------------------


def lattice(bounds, resolution):
    lo1, hi1, lo2, hi2 = bounds
    g1 = np.linspace(lo1, hi1, resolution)
    g2 = np.linspace(lo2, hi2, resolution)
    # row-major: x1 varies slowest
    return np.array([(a, b) for a in g1 for b in g2])


def predictive_grid(net: NetworkState, bounds, resolution):
    """Rows ``(x1, x2, mu_y1, mu_y2, var_y1, var_y2)`` over the lattice."""
    pts = lattice(bounds, resolution)
    rows = np.empty((pts.shape[0], 6))
    for r, p in enumerate(pts):
        pred = predict(net, p)
        rows[r, :2] = p
        rows[r, 2:4] = pred.probs[:2]
        rows[r, 4:6] = np.diag(pred.cov)[:2]
    return rows


def grid_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_HEADER)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def accuracy(net: NetworkState, data: Dataset):
    if len(data) == 0:
        return float("nan")
    hits = [predict(net, x).label == lab for x, lab in zip(data.x, data.labels)]
    return float(np.mean(hits))


def grid_labels(rows):
    """0-based argmax class per grid row, the implicit class included."""
    mu = rows[:, 2:4]
    probs = np.column_stack([mu, np.maximum(1.0 - mu.sum(axis=1), 0.0)])
    return np.argmax(probs, axis=1)


def region_centroid(rows, label):
    """Mean location of the grid points predicted as ``label``; ``None`` if empty."""
    mask = grid_labels(rows) == label
    if not mask.any():
        return None
    return rows[mask, :2].mean(axis=0)


# -- dataset files -----------------------------------------------------------


def dataset_csv(data: Dataset):
    """``x1,x2,label`` with 1-based labels (the last class is ``N``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x1", "x2", "label"))
    for x, lab in zip(data.x, data.labels):
        w.writerow([repr(float(x[0])), repr(float(x[1])), int(lab) + 1])
    return buf.getvalue()


def read_dataset(path, n_classes=3) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "label" not in reader.fieldnames:
            raise ConfigurationError(f"{path}: expected a 'label' column")
        feats = [c for c in reader.fieldnames if c != "label"]
        xs, ys = [], []
        for row in reader:
            lab = int(row["label"])
            if not 1 <= lab <= n_classes:
                raise ConfigurationError(f"{path}: label {lab} outside 1..{n_classes}")
            xs.append([float(row[c]) for c in feats])
            y = np.zeros(n_classes - 1)
            if lab < n_classes:
                y[lab - 1] = 1.0
            ys.append(y)
    if not xs:
        return Dataset(np.zeros((0, len(feats))), np.zeros((0, n_classes - 1)))
    return Dataset(np.array(xs), np.array(ys))


# -- checkpoints -------------------------------------------------------------


def _activation_json(spec: LayerSpec):
    if spec.is_softmax:
        return SOFTMAX
    return {"alpha": spec.activation.alpha, "beta": spec.activation.beta}


def state_to_dict(net: NetworkState):
    cfg = net.probit_cfg
    rho = cfg.rho if np.ndim(cfg.rho) == 0 else np.asarray(cfg.rho).tolist()
    return {
        "format": "probitbnn-checkpoint",
        "version": CHECKPOINT_VERSION,
        "step_count": net.step_count,
        "probit": {"lambda": cfg.lambda_, "rho": rho, "seed": cfg.seed},
        "layers": [
            {
                "width": spec.width,
                "activation": _activation_json(spec),
                "bias": spec.bias,
                "dim": post[0].dim,
                "means": [w.mean.tolist() for w in post],
                "covs": [w.cov.tolist() for w in post],
            }
            for spec, post in zip(net.layers, net.posteriors)
        ],
    }


def state_from_dict(doc) -> NetworkState:
    if doc.get("format") != "probitbnn-checkpoint":
        raise CheckpointError("not a probitbnn checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {doc.get('version')!r} != supported {CHECKPOINT_VERSION}"
        )
    try:
        layers, posts = [], []
        for entry in doc["layers"]:
            act = entry["activation"]
            if act != SOFTMAX:
                act = PwlParams(act["alpha"], act["beta"])
            layers.append(LayerSpec(entry["width"], act, entry["bias"]))
            dim = entry["dim"]
            post = []
            for mean, cov in zip(entry["means"], entry["covs"], strict=True):
                mean, cov = np.array(mean, dtype=float), np.array(cov, dtype=float)
                if mean.shape != (dim,) or cov.shape != (dim, dim):
                    raise CheckpointError("array shape does not match declared dim")
                post.append(WeightPosterior(mean, cov))
            posts.append(tuple(post))
        p = doc["probit"]
        cfg = ProbitConfig(p["lambda"], np.array(p["rho"]) if isinstance(p["rho"], list) else p["rho"], p["seed"])
        return NetworkState(tuple(layers), tuple(posts), cfg, int(doc["step_count"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def save_checkpoint(net: NetworkState, path):
    Path(path).write_text(json.dumps(state_to_dict(net), indent=1))


def load_checkpoint(path) -> NetworkState:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: invalid JSON ({exc})") from exc
    return state_from_dict(doc)


# -- experiment ----------------------------------------------------------------


@dataclass
class ExperimentResult:
    net: NetworkState
    data: Dataset
    grids: dict  # step -> rows
    report: TrainingReport
    accuracy: float


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Train sequentially and export predictive grids at the snapshot steps.

    With ``out_dir`` set, writes ``data.csv``, ``grid_step{k:03d}.csv`` per
    snapshot, ``checkpoint.json`` and ``report.json``. Only the report
    carries a timestamp.
    """
    data = gen_data(cfg)
    net = build_network(cfg.network)
    report = TrainingReport()
    grids = {}
    schedule = set(cfg.snapshot_schedule)

    def snap(step, state):
        if step in schedule:
            grids[step] = predictive_grid(state, cfg.bounds, cfg.grid_resolution)

    snap(0, net)
    net = train(net, data, report, callback=snap)
    acc = accuracy(net, data)
    result = ExperimentResult(net, data, grids, report, acc)
    if out_dir is not None:
        write_artifacts(result, cfg, out_dir)
    return result


def write_artifacts(result: ExperimentResult, cfg: ExperimentConfig, out_dir):
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    (out / "data.csv").write_text(dataset_csv(result.data))
    for step, rows in sorted(result.grids.items()):
        (out / f"grid_step{step:03d}.csv").write_text(grid_csv(rows))
    save_checkpoint(result.net, out / "checkpoint.json")
    report = {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": asdict(cfg),
        "accuracy": result.accuracy,
        "training": result.report.as_dict(),
        "grid_mean_var_y1": {str(k): float(v[:, 4].mean()) for k, v in sorted(result.grids.items())},
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
