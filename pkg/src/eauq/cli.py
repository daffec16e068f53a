"""Command-line entry point: ``eauq {synth,run,evaluate,report}``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
The default output directory comes from ``$EAUQ_OUTPUT_DIR`` (else ``./eauq-out``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import estimators as est
from ._io import atomic_write_text
from .data import CsvValidationError, SyntheticConfig, synthesize, write_csv, write_manifest
from .evaluation import curve_from_arrays, metrics, render_svg, report_json
from .pipeline import ConfigError, format_summary, load_run_config, run_experiment, write_outputs

log = logging.getLogger("eauq")

OUTPUT_ENV = "EAUQ_OUTPUT_DIR"


class UsageError(Exception):
    pass


class JoinError(RuntimeError):
    pass


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "eauq-out"))


def cmd_synth(args) -> int:
    if args.n <= 0:
        raise UsageError("--n must be positive")
    if args.experts <= 0:
        raise UsageError("--experts must be positive")
    try:
        cfg = SyntheticConfig(
            n_examples=args.n,
            n_features=args.features,
            class_separation=args.separation,
            aleatoric_band_fraction=args.band,
            n_experts=args.experts,
            expert_noise_sd=args.noise,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out) if args.out else default_output_dir() / f"synthetic_seed{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset = synthesize(cfg)
    tmp = out.with_name(f".{out.name}.tmp")
    write_csv(dataset, tmp)
    os.replace(tmp, out)
    write_manifest(
        out.with_suffix(".manifest.json"),
        generator="eauq.synthesize",
        version=__version__,
        config=cfg,
        n_rows=len(dataset),
        csv=out.name,
    )
    print(f"wrote {len(dataset)} examples to {out}")
    return 0


def cmd_run(args) -> int:
    try:
        cfg = load_run_config(args.config)
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad config {args.config}: {exc}") from exc
    if args.desk_scale is not None:
        try:
            cfg = dataclasses.replace(cfg, desk_scale=args.desk_scale)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    out = Path(args.out) if args.out else default_output_dir()
    result = run_experiment(cfg, jobs=args.jobs)
    doc = write_outputs(result, out)
    sys.stdout.write(format_summary(doc["summary"]))
    print(f"report written to {out / 'report.json'}")
    return 0


def _read_predictions(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"example_id", "predicted_prob", "label"} - set(reader.fieldnames or [])
        if missing:
            raise UsageError(f"{path}: predictions file lacks columns {sorted(missing)}")
        rows = {}
        for row in reader:
            rows[row["example_id"]] = (float(row["predicted_prob"]), int(row["label"]))
    return rows


def evaluate_files(scores_path, predictions_path) -> dict:
    """Join externally produced scores with predictions and compute metrics."""
    scores = est.read_scores_csv(scores_path)
    if not scores:
        raise UsageError(f"{scores_path}: no score rows")
    preds = _read_predictions(predictions_path)
    records = []
    for s in scores:
        unmatched = [i for i in s.example_ids if i not in preds]
        if unmatched:
            raise JoinError(f"{s.estimator}: {len(unmatched)} scored ids have no prediction, first: {unmatched[:5]}")
        prob = np.array([preds[i][0] for i in s.example_ids])
        label = np.array([preds[i][1] for i in s.example_ids])
        curve = curve_from_arrays((prob >= 0.5) == (label == 1), s.values, list(s.example_ids))
        records.append(metrics(curve, s.estimator).to_dict())
    return {"format": "eauq-metrics", "version": 1, "records": records}


def cmd_evaluate(args) -> int:
    doc = evaluate_files(args.scores, args.predictions)
    text = report_json(doc)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    out = Path(args.run_dir)
    path = out / "report.json"
    if not path.exists():
        raise UsageError(f"{path} does not exist")
    doc = json.loads(path.read_text(encoding="utf-8"))
    sys.stdout.write(format_summary(doc["summary"]))
    if args.svg:
        from .evaluation import RejectionCurve

        curves = {}
        for row in doc["summary"]:
            name = row["method"].replace("+", "_plus_")
            data = np.loadtxt(out / "curves" / f"{name}.csv", delimiter=",", skiprows=1, ndmin=2)
            curves[row["method"]] = RejectionCurve(data[:, 0], data[:, 1], data.shape[0])
        render_svg(curves, args.svg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eauq", description="Expert-aware uncertainty estimation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with simulated experts")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--features", type=int, default=SyntheticConfig.n_features)
    p.add_argument("--separation", type=float, default=SyntheticConfig.class_separation)
    p.add_argument("--band", type=float, default=SyntheticConfig.aleatoric_band_fraction)
    p.add_argument("--experts", type=int, default=6)
    p.add_argument("--noise", type=float, default=SyntheticConfig.expert_noise_sd)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: $EAUQ_OUTPUT_DIR/synthetic_seed<seed>.csv)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="train ensembles and compare estimators")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (default: $EAUQ_OUTPUT_DIR)")
    p.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")
    p.add_argument("--desk-scale", type=float, help="override the config's epoch scale factor")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="metrics for externally produced scores")
    p.add_argument("scores", help="CSV with example_id, estimator, value")
    p.add_argument("predictions", help="CSV with example_id, predicted_prob, label")
    p.add_argument("--out", help="write the metrics report here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print the summary table of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--svg", help="re-render the curve plot to this path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eauq: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CsvValidationError, JoinError, est.MissingAnnotationError, ValueError, RuntimeError, OSError) as exc:
        print(f"eauq: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
