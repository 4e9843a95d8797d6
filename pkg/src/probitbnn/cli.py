"""Command-line entry point.

Subcommands: ``gen-data``, ``train``, ``predict``, ``grid``, ``experiment``.
Failures print one JSON object ``{"error": <category>, "message": ...}`` on
stderr and exit with a category-specific nonzero code.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ProbitBNNError
from .experiment import (
    ExperimentConfig,
    build_network,
    dataset_csv,
    gen_data,
    grid_csv,
    load_checkpoint,
    predictive_grid,
    read_dataset,
    run_experiment,
    save_checkpoint,
)
from .network import TrainingReport, predict, train

EXIT_CODES = {
    "configuration": 2,
    "numerical": 3,
    "calibration": 3,
    "checkpoint": 4,
    "io": 5,
}


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args):
    out = Path(args.out)
    os.makedirs(out, exist_ok=True)
    return out


def cmd_gen_data(args):
    data = gen_data(_config(args))
    path = _out_dir(args) / "data.csv"
    path.write_text(dataset_csv(data))
    print(path)


def cmd_train(args):
    cfg = _config(args)
    net = load_checkpoint(args.init) if args.init else build_network(cfg.network)
    data = read_dataset(args.data, net.n_classes)
    report = TrainingReport()
    net = train(net, data, report)
    out = _out_dir(args)
    save_checkpoint(net, out / "checkpoint.json")
    (out / "train_report.json").write_text(json.dumps(report.as_dict(), indent=2))
    print(json.dumps({"applied": report.applied, "skipped": len(report.skipped)}))


def _parse_point(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad point {text!r}: {exc}") from exc


def cmd_predict(args):
    net = load_checkpoint(args.checkpoint)
    for x in args.point:
        pred = predict(net, x)
        print(json.dumps({
            "x": x.tolist(),
            "probs": pred.probs.tolist(),
            "cov": pred.cov.tolist(),
            "label": pred.label + 1,
        }))


def cmd_grid(args):
    cfg = _config(args)
    net = load_checkpoint(args.checkpoint)
    rows = predictive_grid(net, cfg.bounds, cfg.grid_resolution)
    path = _out_dir(args) / "grid.csv"
    path.write_text(grid_csv(rows))
    print(path)


def cmd_experiment(args):
    cfg = _config(args)
    res = run_experiment(cfg, args.out)
    print(json.dumps({
        "accuracy": res.accuracy,
        "applied": res.report.applied,
        "skipped": len(res.report.skipped),
        "out": str(args.out),
    }))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", default="out", help="output directory (default: out)")

    p = argparse.ArgumentParser(prog="probitbnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="sample the wedge dataset")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="sequentially train on a CSV dataset")
    s.add_argument("--data", required=True, help="CSV with x columns and a 1-based label")
    s.add_argument("--init", help="start from this checkpoint instead of the config network")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="predictive moments at points")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("point", nargs="+", type=_parse_point, help="comma-separated coordinates")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("grid", parents=[common], help="export a predictive grid CSV")
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("experiment", parents=[common], help="full wedge run with snapshots")
    s.set_defaults(func=cmd_experiment)
    return p


def _fail(category, message):
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ProbitBNNError as exc:
        return _fail(exc.category, str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    except (json.JSONDecodeError, TypeError) as exc:
        return _fail("configuration", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
