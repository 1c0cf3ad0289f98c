"""
Command-line harness.

    python -m app.cli ingest data/shuttle.csv --out results/
    python -m app.cli tune mcod data/shuttle.csv --budget 30
    python -m app.cli run --config run.json
    python -m app.cli report results/ --kind ranks

Every subcommand prints a JSON summary on stdout. Failures print
{"error": ..., "detail": ...} on stderr and exit with status 1.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from app.core.config import settings
from app.core.log import configure_logging
from app.core.stream import WindowSpec
from app.schemas.schemas import RunConfig
from app.services import benchmark
from app.services.harness import prepare_stream, stream_for
from app.services.ingest import dump_stream, generate_subspace_dataset, load_csv, save_csv
from app.services.metafeatures import compute_metafeatures, metafeature_table
from app.services.tuning import tune

logger = logging.getLogger(__name__)


def _window(args) -> WindowSpec:
    return WindowSpec(args.window_size, args.window_slide)


def _out(args) -> Path:
    out = Path(args.out or settings.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ── Subcommands ──────────────────────────────────────────────────────────────

def cmd_ingest(args) -> dict:
    dataset = load_csv(args.dataset, args.label_column)
    stream = prepare_stream(dataset, _window(args), args.seed)
    path = dump_stream(stream, _out(args) / f"{dataset.name}_stream.csv", args.label_column)
    parts = stream.partition
    return {
        "dataset": dataset.name,
        "stream": str(path),
        "windows": len(stream),
        "train": [parts.train.start, parts.train.stop],
        "val": [parts.val.start, parts.val.stop],
        "test": [parts.test.start, parts.test.stop],
        "lacks_anomalies": stream.lacks_anomalies,
    }


def cmd_synth(args) -> dict:
    subspaces = [list(range(i * args.subspace_dim, (i + 1) * args.subspace_dim)) for i in range(args.subspaces)]
    dataset = generate_subspace_dataset(args.normals, args.anomalies, args.d, subspaces, args.seed)
    path = save_csv(dataset, _out(args) / f"{dataset.name}.csv", args.label_column)
    return {"dataset": dataset.name, "path": str(path), "n": dataset.n, "d": dataset.d}


def cmd_tune(args) -> dict:
    dataset = load_csv(args.dataset, args.label_column)
    stream = stream_for(args.detector, prepare_stream(dataset, _window(args), args.seed))
    result = tune(args.detector, stream, args.budget, args.seed)
    return result.model_dump()


def cmd_run(args) -> dict:
    config = RunConfig.from_file(args.config)
    updates = {}
    if args.out:
        updates["out"] = args.out
    if args.budget_set:
        updates["budget"] = args.budget
    if args.seed_set:
        updates["seeds"] = [args.seed]
    if args.window_size_set:
        updates["window_size"] = args.window_size
    if args.window_slide_set:
        updates["window_slide"] = args.window_slide
    if updates:
        config = RunConfig.model_validate(config.model_dump() | updates)
    reports = benchmark.run_benchmark(config)
    failed = sum(r.status == "failed" for r in reports)
    return {"reports": len(reports), "failed": failed, "out": config.out}


def cmd_report(args) -> dict:
    reports = benchmark.read_reports(args.reports)
    meta = pd.read_csv(args.meta).set_index("dataset") if args.meta else None
    frame = benchmark.report(reports, args.kind, _out(args), metafeatures=meta)
    return {"kind": args.kind, "rows": len(frame), "path": str(_out(args) / f"{args.kind}.csv")}


def cmd_pareto(args) -> dict:
    reports = benchmark.read_reports(args.reports)
    frame = benchmark.report(reports, "pareto", _out(args))
    return {"frontier": frame["detector"].tolist()}


def cmd_meta(args) -> dict:
    vectors = [compute_metafeatures(load_csv(path, args.label_column)) for path in args.datasets]
    path = _out(args) / "metafeatures.csv"
    metafeature_table(vectors).to_csv(path)
    return {"datasets": [v.dataset for v in vectors], "path": str(path)}


def cmd_robustness(args) -> dict:
    frame = benchmark.robustness_experiment(
        dimensions=args.dimensions,
        subspace_dims=args.subspace_dims,
        seeds=range(args.seeds),
        detectors=args.detectors,
        window=_window(args),
        budget=args.budget,
    )
    path = _out(args) / "robustness.csv"
    frame.to_csv(path, index=False)
    return {"rows": len(frame), "path": str(path)}


# ── Parser ───────────────────────────────────────────────────────────────────

class _Tracked(argparse.Action):
    """Stores the value and records that the flag was given explicitly."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        setattr(namespace, f"{self.dest}_set", True)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=settings.base_seed, action=_Tracked)
    p.add_argument("--window-size", type=int, default=settings.window_size, action=_Tracked)
    p.add_argument("--window-slide", type=int, default=settings.window_slide, action=_Tracked)
    p.add_argument("--budget", type=int, default=settings.tuning_budget, action=_Tracked)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--label-column", type=str, default=settings.label_column)
    p.set_defaults(seed_set=False, window_size_set=False, window_slide_set=False, budget_set=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streambench", description="Online anomaly detection benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="stratify a labeled CSV into a windowed stream")
    p.add_argument("dataset")
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a dataset with subspace anomalies")
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--subspace-dim", type=int, default=2)
    p.add_argument("--subspaces", type=int, default=2)
    p.add_argument("--normals", type=int, default=857)
    p.add_argument("--anomalies", type=int, default=18)
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tune", help="random-search one detector on one dataset")
    p.add_argument("detector")
    p.add_argument("dataset")
    _common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("run", help="run a benchmark from a JSON config")
    p.add_argument("--config", required=True)
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize benchmark reports")
    p.add_argument("reports")
    p.add_argument("--kind", choices=benchmark.REPORT_KINDS, required=True)
    p.add_argument("--meta", type=str, default=None, help="meta-feature CSV for --kind meta")
    _common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("meta", help="compute meta-features of datasets")
    p.add_argument("datasets", nargs="+")
    _common(p)
    p.set_defaults(func=cmd_meta)

    p = sub.add_parser("pareto", help="Pareto frontier of update time and MAP")
    p.add_argument("reports")
    _common(p)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("robustness", help="MAP against dimensionality on subspace anomalies")
    p.add_argument("--dimensions", type=int, nargs="+", default=[20, 40, 60, 80, 100])
    p.add_argument("--subspace-dims", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--detectors", nargs="+", default=["mcod", "loda", "xstream"])
    _common(p)
    p.set_defaults(func=cmd_robustness)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging(settings.log_level)
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
