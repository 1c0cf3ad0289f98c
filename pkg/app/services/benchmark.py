"""
Benchmark runs: tune every (detector, dataset) pair on validation windows,
evaluate the tuned configuration on the test windows, and turn the resulting
report rows into summary tables.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import EvaluationError
from app.core.stream import WindowSpec
from app.schemas.schemas import BenchReport, RunConfig, TuningResult
from app.services import evaluation
from app.services.detectors import get_detector
from app.services.harness import Phase, prepare_stream, run_config, stream_for
from app.services.ingest import Dataset, generate_subspace_dataset, load_csv
from app.services.metafeatures import spearman_meta
from app.services.tuning import tune

logger = logging.getLogger(__name__)

REPORT_KINDS = ("wins", "ranks", "cdf", "pareto", "meta")


# ── Jobs ─────────────────────────────────────────────────────────────────────

def run_job(dataset: Dataset, detector: str, config: RunConfig) -> tuple[list[BenchReport], Optional[TuningResult]]:
    """Tune once, then evaluate on test windows for each seed (one seed when deterministic)."""
    info = get_detector(detector)
    base_seed = config.seeds[0]
    try:
        stream = stream_for(detector, prepare_stream(dataset, config.window, base_seed))
        tuned = tune(detector, stream, config.budget, base_seed, config.grids.get(detector))
    except ValueError as exc:
        logger.error("%s on %s failed during tuning: %s", detector, dataset.name, exc)
        return [BenchReport(detector=detector, dataset=dataset.name, seed=base_seed, status="failed",
                            error=str(exc))], None

    seeds = [base_seed] if info.deterministic else list(config.seeds)
    reports = []
    for seed in seeds:
        try:
            result = run_config(detector, tuned.params, stream, seed, Phase.TEST)
        except ValueError as exc:
            logger.error("%s on %s (seed %d) failed: %s", detector, dataset.name, seed, exc)
            reports.append(BenchReport(detector=detector, dataset=dataset.name, params=tuned.params,
                                       seed=seed, status="failed", error=str(exc)))
            continue
        reports.append(BenchReport(
            detector=detector,
            dataset=dataset.name,
            params=tuned.params,
            seed=seed,
            map=result.metrics.map,
            auc=result.metrics.mean_auc,
            train_seconds=result.probe.training_seconds,
            update_seconds=result.probe.mean_update_seconds,
            update_seconds_std=result.probe.std_update_seconds,
            n_windows=result.metrics.n_windows,
            n_excluded=result.metrics.n_excluded,
        ))
    return reports, tuned


def _job(args):
    dataset, detector, config = args
    return run_job(dataset, detector, config)


def load_datasets(config: RunConfig) -> list[Dataset]:
    return [load_csv(path, config.label_column) for path in config.datasets]


def run_benchmark(config: RunConfig, datasets: Optional[Sequence[Dataset]] = None,
                  max_workers: Optional[int] = None, write: bool = True) -> list[BenchReport]:
    datasets = list(datasets) if datasets is not None else load_datasets(config)
    jobs = [(dataset, detector, config) for dataset in datasets for detector in config.detectors]
    workers = max_workers or settings.max_workers
    logger.info("benchmark: %d jobs over %d datasets, %d workers", len(jobs), len(datasets), workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(job) for job in jobs]

    reports = [row for rows, _ in results for row in rows]
    tunings = [tuned for _, tuned in results if tuned is not None]
    if write:
        write_reports(reports, config.out, tunings)
    return reports


# ── Persistence ──────────────────────────────────────────────────────────────

def write_reports(reports: Sequence[BenchReport], out_dir, tunings: Sequence[TuningResult] = ()) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.as_row() for r in reports]).to_csv(out / "reports.csv", index=False)
    with open(out / "reports.jsonl", "w") as fh:
        for r in reports:
            fh.write(r.model_dump_json() + "\n")
    if tunings:
        with open(out / "tuning.jsonl", "w") as fh:
            for t in tunings:
                fh.write(t.model_dump_json() + "\n")
    logger.info("wrote %d report rows to %s", len(reports), out)
    return out


def read_reports(path) -> list[BenchReport]:
    path = Path(path)
    if path.is_dir():
        path = path / "reports.jsonl"
    with open(path) as fh:
        return [BenchReport.model_validate_json(line) for line in fh if line.strip()]


# ── Summary tables ───────────────────────────────────────────────────────────

def pareto_table(reports: Iterable[BenchReport]) -> pd.DataFrame:
    ok = [r for r in reports if r.status == "ok" and r.map is not None]
    if not ok:
        raise EvaluationError("no successful reports for a Pareto frontier")
    frame = pd.DataFrame([{"detector": r.detector, "update_seconds": r.update_seconds, "map": r.map} for r in ok])
    summary = frame.groupby("detector", sort=True).mean().reset_index()
    keep = evaluation.pareto_frontier(list(zip(summary["update_seconds"], summary["map"])))
    return summary.iloc[keep].reset_index(drop=True)


def meta_table(reports: Iterable[BenchReport], metafeatures: pd.DataFrame) -> pd.DataFrame:
    """Spearman ρ between every numeric meta-feature and each detector's performance ratio."""
    table = evaluation.metric_table(reports, "map")
    rows = []
    for detector in table.columns:
        ratio = evaluation.performance_ratio(table, detector).dropna()
        for feature in metafeatures.select_dtypes("number").columns:
            paired = pd.concat([metafeatures[feature], ratio], axis=1, join="inner").dropna()
            try:
                rho, p = spearman_meta(paired.iloc[:, 0], paired.iloc[:, 1])
            except ValueError as exc:
                logger.debug("skipping %s/%s: %s", detector, feature, exc)
                continue
            rows.append({"detector": detector, "feature": feature, "rho": rho, "p_value": p, "n": len(paired)})
    return pd.DataFrame(rows, columns=["detector", "feature", "rho", "p_value", "n"])


def report(reports: Sequence[BenchReport], kind: str, out_dir=None,
           metafeatures: Optional[pd.DataFrame] = None, alpha: float = 0.05) -> pd.DataFrame:
    if kind == "wins":
        frame = evaluation.wins_and_adw(evaluation.metric_table(reports, "map"))
        frame = frame.rename_axis("detector").reset_index()
    elif kind == "ranks":
        analysis = evaluation.rank_analysis(evaluation.metric_table(reports, "map"), alpha)
        frame = analysis.mean_ranks.rename("mean_rank").rename_axis("detector").reset_index()
        frame["friedman"] = analysis.friedman
        frame["p_value"] = analysis.p_value
        frame["critical_distance"] = analysis.critical_distance
    elif kind == "cdf":
        counts = evaluation.random_failure_count(evaluation.metric_table(reports, "auc"))
        frame = evaluation.random_failure_cdf(counts)
    elif kind == "pareto":
        frame = pareto_table(reports)
    elif kind == "meta":
        if metafeatures is None:
            raise EvaluationError("the meta report needs a meta-feature table")
        frame = meta_table(reports, metafeatures)
    else:
        raise EvaluationError(f"unknown report kind '{kind}', expected one of {REPORT_KINDS}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out / f"{kind}.csv", index=False)
    return frame


# ── Robustness to dimensionality ─────────────────────────────────────────────

ROBUSTNESS_SAMPLES = 875
ROBUSTNESS_ANOMALY_RATIO = 0.02


def robustness_experiment(
    dimensions: Sequence[int] = (20, 40, 60, 80, 100),
    subspace_dims: Sequence[int] = (2, 3, 4, 5),
    seeds: Sequence[int] = range(5),
    detectors: Sequence[str] = ("mcod", "loda", "xstream"),
    window: Optional[WindowSpec] = None,
    budget: Optional[int] = None,
    n_subspaces: int = 2,
) -> pd.DataFrame:
    """
    Test MAP of each detector on generated datasets whose anomalies hide in
    `n_subspaces` disjoint subspaces of a given size, as the total
    dimensionality grows. One long-format row per (detector, d, subspace_dim, seed).
    """
    window = window or WindowSpec(settings.window_size, settings.window_slide)
    budget = budget or settings.tuning_budget
    n_anomalies = int(round(ROBUSTNESS_SAMPLES * ROBUSTNESS_ANOMALY_RATIO))
    rows = []
    for d in dimensions:
        for sdim in subspace_dims:
            for seed in seeds:
                rng = np.random.default_rng(seed)
                features = rng.permutation(d)
                subspaces = [features[i * sdim:(i + 1) * sdim].tolist() for i in range(n_subspaces)]
                dataset = generate_subspace_dataset(ROBUSTNESS_SAMPLES - n_anomalies, n_anomalies, d,
                                                    subspaces, seed)
                base = prepare_stream(dataset, window, seed)
                for detector in detectors:
                    stream = stream_for(detector, base)
                    try:
                        tuned = tune(detector, stream, budget, seed)
                        value = run_config(detector, tuned.params, stream, seed, Phase.TEST).metrics.map
                    except ValueError as exc:
                        logger.error("robustness: %s at d=%d failed: %s", detector, d, exc)
                        value = None
                    rows.append({"detector": detector, "d": d, "subspace_dim": sdim, "seed": seed, "map": value})
    return pd.DataFrame(rows)
