"""
Evaluation: windowed ranking metrics, comparison against random detection,
wins/ADW tables, Friedman/Nemenyi rank analysis, Pareto frontier and timing.

Scores handed to this module are already normalized so that higher means
more anomalous. Cross-detector tables are pandas DataFrames indexed by
dataset with one column per detector.
"""

import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from app.core.config import settings
from app.core.errors import EvaluationError

logger = logging.getLogger(__name__)


# ── Per-window metrics ───────────────────────────────────────────────────────

@dataclass
class ScoredWindow:
    scores: np.ndarray
    labels: np.ndarray
    index: int = 0
    ordinals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape:
            raise EvaluationError(
                f"window {self.index}: {len(self.scores)} scores for {len(self.labels)} labels"
            )
        if self.ordinals is None:
            self.ordinals = np.arange(len(self.scores))

    @property
    def n_anomalies(self) -> int:
        return int(self.labels.sum())

    @property
    def both_classes(self) -> bool:
        return 0 < self.n_anomalies < len(self.labels)

    def ranking(self) -> np.ndarray:
        """Positions by descending score; ties broken by ordinal."""
        return np.lexsort((self.ordinals, -self.scores))


def auc_roc(window: ScoredWindow) -> float:
    """Mann–Whitney AUC; tied scores contribute one half."""
    if not window.both_classes:
        raise EvaluationError(f"window {window.index}: AUC needs both classes")
    ranks = stats.rankdata(window.scores)
    n_pos = window.n_anomalies
    n_neg = len(window.labels) - n_pos
    return float((ranks[window.labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def precision_at_k(window: ScoredWindow, k: int) -> float:
    if k < 1:
        raise EvaluationError(f"precision@k needs k >= 1, got {k}")
    top = window.ranking()[:k]
    return float(window.labels[top].sum() / k)


def average_precision(window: ScoredWindow, k: Optional[int] = None) -> float:
    """Mean of P@j over the positions j ≤ k that hold an anomaly, divided by all anomalies."""
    if window.n_anomalies == 0:
        raise EvaluationError(f"window {window.index}: AP needs at least one anomaly")
    k = len(window.labels) if k is None else min(k, len(window.labels))
    hits = window.labels[window.ranking()[:k]]
    precision = np.cumsum(hits) / np.arange(1, k + 1)
    return float((precision * hits).sum() / window.n_anomalies)


@dataclass
class StreamMetrics:
    map: float
    mean_auc: Optional[float]
    n_windows: int
    n_excluded: int
    window_ap: list[float] = field(default_factory=list)
    window_auc: list[float] = field(default_factory=list)


def evaluate_windows(windows: Sequence[ScoredWindow]) -> StreamMetrics:
    """MAP and mean AUC over the windows; windows missing a class are excluded and counted."""
    aps, aucs, excluded = [], [], 0
    for window in windows:
        if window.n_anomalies == 0:
            excluded += 1
            continue
        aps.append(average_precision(window))
        if window.both_classes:
            aucs.append(auc_roc(window))
    if not aps:
        raise EvaluationError("no window contains an anomaly")
    if excluded:
        logger.warning("%d of %d windows lack anomalies and were excluded", excluded, len(windows))
    return StreamMetrics(
        map=float(np.mean(aps)),
        mean_auc=float(np.mean(aucs)) if aucs else None,
        n_windows=len(windows),
        n_excluded=excluded,
        window_ap=aps,
        window_auc=aucs,
    )


def map_over_stream(windows: Sequence[ScoredWindow]) -> float:
    return evaluate_windows(windows).map


# ── Cross-detector tables ────────────────────────────────────────────────────

def metric_table(reports: Iterable, metric: str = "map") -> pd.DataFrame:
    """Dataset × detector table of `metric` from successful report rows, averaged over seeds."""
    rows = [
        {"dataset": r.dataset, "detector": r.detector, "value": getattr(r, metric)}
        for r in reports
        if getattr(r, "status", "ok") == "ok" and getattr(r, metric) is not None
    ]
    if not rows:
        raise EvaluationError(f"no successful reports carry '{metric}'")
    frame = pd.DataFrame(rows)
    return frame.pivot_table(index="dataset", columns="detector", values="value", aggfunc="mean")


def random_failure_count(table: pd.DataFrame, threshold: Optional[float] = None) -> pd.Series:
    """Per dataset, how many detectors score an AUC below `threshold`."""
    threshold = settings.random_failure_threshold if threshold is None else threshold
    return (table < threshold).sum(axis=1).astype(int).rename("n_failing")


def random_failure_cdf(counts: pd.Series) -> pd.DataFrame:
    """PMF and CDF of the number of failing detectors per dataset."""
    if len(counts) == 0:
        raise EvaluationError("no failure counts to summarize")
    top = int(counts.max())
    tally = counts.value_counts().reindex(range(top + 1), fill_value=0).sort_index()
    frame = pd.DataFrame({"n_failing": tally.index, "datasets": tally.values})
    frame["cumulative"] = frame["datasets"].cumsum()
    frame["pmf"] = frame["datasets"] / len(counts)
    frame["cdf"] = frame["cumulative"] / len(counts)
    return frame


def wins_and_adw(table: pd.DataFrame) -> pd.DataFrame:
    """
    Wins per detector (shared on ties) and the average difference from the
    winner over the datasets it did not win; NaN for a detector that never lost.
    """
    if table.shape[1] == 0:
        raise EvaluationError("wins need at least one detector")
    best = table.max(axis=1)
    won = table.eq(best, axis=0)
    gap = table.rsub(best, axis=0).where(~won)
    return pd.DataFrame({"wins": won.sum(axis=0).astype(int), "adw": gap.mean(axis=0)})


def performance_ratio(table: pd.DataFrame, detector: str) -> pd.Series:
    """Per dataset, the detector's metric over the best metric among the other detectors."""
    if detector not in table.columns:
        raise EvaluationError(f"detector '{detector}' missing from the metric table")
    others = table.drop(columns=[detector])
    if others.shape[1] == 0:
        raise EvaluationError("performance ratio needs at least two detectors")
    best_other = others.max(axis=1).replace(0, np.nan)
    return (table[detector] / best_other).rename(f"{detector}_ratio")


# ── Rank analysis ────────────────────────────────────────────────────────────

# Studentized range statistic divided by √2, infinite degrees of freedom.
NEMENYI_Q = {
    0.05: [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219,
           3.268, 3.313, 3.354, 3.391, 3.426, 3.458, 3.489, 3.517, 3.544],
    0.10: [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978,
           3.030, 3.077, 3.120, 3.159, 3.196, 3.230, 3.261, 3.291, 3.319],
}


def nemenyi_cd(k: int, n_datasets: int, alpha: float = 0.05, q_groups: Optional[int] = None) -> float:
    """
    CD = q · sqrt(k(k+1) / 6N). `q_groups` reads q for another group count than k;
    q_groups=7 gives CD(10, 24) = 2.57 and CD(16, 24) = 4.05.
    """
    if alpha not in NEMENYI_Q:
        raise EvaluationError(f"no Nemenyi table for alpha={alpha}")
    groups = k if q_groups is None else q_groups
    for count in (k, groups):
        if not 2 <= count <= 20:
            raise EvaluationError(f"Nemenyi table covers 2 to 20 detectors, got {count}")
    if n_datasets < 1:
        raise EvaluationError("Nemenyi distance needs at least one dataset")
    q = NEMENYI_Q[alpha][groups - 2]
    return q * math.sqrt(k * (k + 1) / (6 * n_datasets))


@dataclass
class RankAnalysis:
    ranks: pd.DataFrame
    mean_ranks: pd.Series
    friedman: float
    p_value: float
    critical_distance: float


def rank_analysis(table: pd.DataFrame, alpha: float = 0.05, q_groups: Optional[int] = None) -> RankAnalysis:
    """Fractional ranks per dataset (1 = best), Friedman χ² and the Nemenyi critical distance."""
    if table.isna().to_numpy().any():
        raise EvaluationError("rank analysis needs a complete dataset × detector matrix")
    n, k = table.shape
    if k < 2 or n < 1:
        raise EvaluationError(f"rank analysis needs at least 2 detectors and 1 dataset, got {k}x{n}")
    ranks = table.apply(lambda row: pd.Series(stats.rankdata(-row.to_numpy()), index=row.index), axis=1)
    mean_ranks = ranks.mean(axis=0).sort_values()
    chi2 = 12 * n / (k * (k + 1)) * (float((mean_ranks ** 2).sum()) - k * (k + 1) ** 2 / 4)
    chi2 = max(chi2, 0.0)
    p_value = float(stats.chi2.sf(chi2, k - 1))
    return RankAnalysis(ranks, mean_ranks, chi2, p_value, nemenyi_cd(k, n, alpha, q_groups))


# ── Pareto frontier ──────────────────────────────────────────────────────────

def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """(time, quality): a dominates b when no slower, no worse and better in one."""
    return a[0] <= b[0] and a[1] >= b[1] and (a[0] < b[0] or a[1] > b[1])


def pareto_frontier(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of non-dominated (update seconds, MAP) points, ordered by time."""
    if not points:
        raise EvaluationError("pareto frontier needs at least one point")
    order = sorted(range(len(points)), key=lambda i: (points[i][0], -points[i][1], i))
    frontier: list[int] = []
    best: Optional[tuple[float, float]] = None
    for i in order:
        t, q = points[i]
        if best is None or q > best[1] or (q == best[1] and t == best[0]):
            frontier.append(i)
            if best is None or q > best[1]:
                best = (t, q)
    return frontier


# ── Timing ───────────────────────────────────────────────────────────────────

class TimeProbe:
    """Accumulates training time and per-window update time with a monotonic clock."""

    def __init__(self):
        self.training_seconds = 0.0
        self.updates: list[float] = []

    @contextmanager
    def training(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.training_seconds += time.perf_counter() - start

    @contextmanager
    def update(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.updates.append(time.perf_counter() - start)

    @property
    def mean_update_seconds(self) -> float:
        return float(np.mean(self.updates)) if self.updates else 0.0

    @property
    def std_update_seconds(self) -> float:
        return float(np.std(self.updates)) if self.updates else 0.0
