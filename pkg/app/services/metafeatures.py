"""
Dataset profiling: general, fullspace and value-space meta-features, and the
Spearman analysis relating a meta-feature to detector performance.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from app.core.errors import EvaluationError
from app.schemas.schemas import MetaFeatureVector
from app.services.ingest import Dataset

logger = logging.getLogger(__name__)

CORRELATION_THRESHOLD = 0.8
OUTLIER_SD = 3.0

# Meta-features that need the labels to be computed.
EXPLANATORY = {"anomaly_ratio", "center_distance", "anomaly_to_normal"}


def is_predictive(feature: str) -> bool:
    return feature not in EXPLANATORY


def _finite(value) -> Optional[float]:
    value = float(value)
    return value if math.isfinite(value) else None


def _split(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    normals = dataset.X[~dataset.labels.astype(bool)]
    anomalies = dataset.X[dataset.labels.astype(bool)]
    if len(normals) == 0 or len(anomalies) == 0:
        raise EvaluationError(f"{dataset.name}: meta-features need both normals and anomalies")
    return normals, anomalies


def dist_cm(dataset: Dataset) -> float:
    """Mean over features of (median of normals − median of anomalies)."""
    normals, anomalies = _split(dataset)
    return float(np.mean(np.median(normals, axis=0) - np.median(anomalies, axis=0)))


def compute_and(dataset: Dataset) -> Optional[float]:
    """Anomaly-to-normal distance, (DistCM − AvgMAD) / AvgMed; None when AvgMed is 0."""
    avg_mad = float(np.mean(stats.median_abs_deviation(dataset.X, axis=0)))
    avg_med = float(np.mean(np.median(dataset.X, axis=0)))
    if avg_med == 0:
        logger.warning("%s: average median is 0, AND is undefined", dataset.name)
        return None
    return (dist_cm(dataset) - avg_mad) / avg_med


def _per_feature(X: np.ndarray) -> dict[str, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        q75, q25 = np.percentile(X, [75, 25], axis=0)
        sd = X.std(axis=0)
        constant = sd == 0
        kurtosis = np.where(constant, np.nan, stats.kurtosis(X, axis=0, fisher=True, bias=True))
        skewness = np.where(constant, np.nan, stats.skew(X, axis=0, bias=True))
    return {
        "iqr": q75 - q25,
        "kurtosis": kurtosis,
        "mad": stats.median_abs_deviation(X, axis=0),
        "max": X.max(axis=0),
        "mean": X.mean(axis=0),
        "median": np.median(X, axis=0),
        "min": X.min(axis=0),
        "range": X.max(axis=0) - X.min(axis=0),
        "sd": sd,
        "skewness": skewness,
        "sparsity": np.array([len(np.unique(col)) / len(col) for col in X.T]),
        "variance": X.var(axis=0),
    }


def _aggregate(name: str, values: np.ndarray, out: dict[str, Optional[float]]):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    out[f"{name}_mean"] = _finite(values.mean()) if len(values) else None
    out[f"{name}_sd"] = _finite(values.std()) if len(values) else None


def _distinct_pairs(matrix: np.ndarray) -> np.ndarray:
    return matrix[np.triu_indices(matrix.shape[0], k=1)]


def outlier_count(X: np.ndarray, n_sd: float = OUTLIER_SD) -> int:
    """Samples with at least one feature more than n_sd standard deviations from its mean."""
    sd = X.std(axis=0)
    usable = sd > 0
    if not usable.any():
        return 0
    z = np.abs(X[:, usable] - X[:, usable].mean(axis=0)) / sd[usable]
    return int((z > n_sd).any(axis=1).sum())


def correlated_pairs(X: np.ndarray, threshold: float = CORRELATION_THRESHOLD) -> int:
    usable = X.std(axis=0) > 0
    if usable.sum() < 2:
        return 0
    corr = np.corrcoef(X[:, usable], rowvar=False)
    return int((np.abs(_distinct_pairs(corr)) >= threshold).sum())


def compute_metafeatures(dataset: Dataset) -> MetaFeatureVector:
    X = dataset.X
    if len(X) < 2:
        raise EvaluationError(f"{dataset.name}: meta-features need at least two samples")
    normals, anomalies = _split(dataset)

    value_space: dict[str, Optional[float]] = {}
    if X.shape[1] >= 2:
        cov = np.cov(X, rowvar=False)
        _aggregate("covariance", np.abs(_distinct_pairs(cov)), value_space)
        _aggregate("eigenvalues", np.linalg.eigvalsh(cov), value_space)
    else:
        var = np.atleast_1d(X.var(axis=0, ddof=1))
        value_space.update({"covariance_mean": None, "covariance_sd": None})
        _aggregate("eigenvalues", var, value_space)
    for name, values in _per_feature(X).items():
        _aggregate(name, values, value_space)

    return MetaFeatureVector(
        dataset=dataset.name,
        n_samples=dataset.n,
        n_features=dataset.d,
        anomaly_ratio=dataset.anomaly_ratio,
        center_distance=float(np.linalg.norm(normals.mean(axis=0) - anomalies.mean(axis=0))),
        anomaly_to_normal=compute_and(dataset),
        value_space=value_space,
        outliers_3sd=outlier_count(X),
        correlated_pairs=correlated_pairs(X),
    )


def metafeature_table(vectors: Sequence[MetaFeatureVector]) -> pd.DataFrame:
    return pd.DataFrame([v.as_row() for v in vectors]).set_index("dataset")


def spearman_meta(meta_values: Sequence[float], performance: Sequence[float]) -> tuple[float, float]:
    """Spearman ρ on fractional ranks with a two-sided t-approximation p-value."""
    x = np.asarray(meta_values, dtype=float)
    y = np.asarray(performance, dtype=float)
    if x.shape != y.shape:
        raise EvaluationError(f"{len(x)} meta values for {len(y)} performance values")
    n = len(x)
    if n < 4:
        raise EvaluationError(f"Spearman analysis needs at least 4 pairs, got {n}")
    rx, ry = stats.rankdata(x), stats.rankdata(y)
    if rx.std() == 0 or ry.std() == 0:
        raise EvaluationError("Spearman correlation is undefined when one variable is constant")
    rho = float(np.corrcoef(rx, ry)[0, 1])
    return rho, spearman_p_value(rho, n)


def spearman_p_value(rho: float, n: int) -> float:
    if abs(rho) >= 1:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1 - rho * rho))
    return float(2 * stats.t.sf(abs(t), n - 2))
