"""
Dataset ingest and stream synthesis.

CSV layout: header row, numeric feature columns, one 0/1 label column
(default `is_anomaly`). Stream dumps add a leading `ordinal` column.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import StreamError
from app.core.stream import Batch, StreamPartition, WindowedStream, WindowSpec

logger = logging.getLogger(__name__)

ORDINAL_COLUMN = "ordinal"

# Synthetic subspace generator
SUBSPACE_RHO = 0.9
SUBSPACE_SIGMA = 0.05
SUBSPACE_CLUSTERS = 2
ANOMALY_OFFSET = 0.15


@dataclass
class Dataset:
    name: str
    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.X.ndim != 2 or self.X.shape[0] != self.labels.shape[0]:
            raise StreamError(f"dataset {self.name}: features {self.X.shape} do not match labels {self.labels.shape}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def anomaly_ratio(self) -> float:
        return float(self.labels.mean()) if self.n else 0.0

    def as_batch(self) -> Batch:
        return Batch.from_arrays(self.X, self.labels)


# ── CSV ───────────────────────────────────────────────────────────────────────

def load_csv(path, label_column: Optional[str] = None, name: Optional[str] = None) -> Dataset:
    label_column = label_column or settings.label_column
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise StreamError(f"{path}: file is empty")
    if frame.empty:
        raise StreamError(f"{path}: file has no rows")
    if label_column not in frame.columns:
        raise StreamError(f"{path}: missing label column '{label_column}'")
    if frame.isna().any().any():
        bad = frame.columns[frame.isna().any()].tolist()
        raise StreamError(f"{path}: null cells in columns {bad}")

    features = frame.drop(columns=[c for c in (label_column, ORDINAL_COLUMN) if c in frame.columns])
    non_numeric = [c for c in features.columns if not pd.api.types.is_numeric_dtype(features[c])]
    if non_numeric:
        raise StreamError(f"{path}: non-numeric feature columns {non_numeric}")
    if features.shape[1] == 0:
        raise StreamError(f"{path}: no feature columns")

    labels = frame[label_column]
    if not labels.isin([0, 1]).all():
        raise StreamError(f"{path}: label column '{label_column}' must hold only 0/1")

    dataset = Dataset(name or path.stem, features.to_numpy(dtype=float), labels.to_numpy().astype(bool))
    logger.info("loaded %s: n=%d d=%d anomaly_ratio=%.4f", dataset.name, dataset.n, dataset.d, dataset.anomaly_ratio)
    return dataset


def save_csv(dataset: Dataset, path, label_column: Optional[str] = None) -> Path:
    label_column = label_column or settings.label_column
    path = Path(path)
    frame = pd.DataFrame(dataset.X, columns=[f"f{i}" for i in range(dataset.d)])
    frame[label_column] = dataset.labels.astype(int)
    frame.to_csv(path, index=False)
    return path


def dump_stream(stream: WindowedStream, path, label_column: Optional[str] = None) -> Path:
    """Write a generated stream in arrival order with its ordinals."""
    label_column = label_column or settings.label_column
    batch = stream.batch
    path = Path(path)
    frame = pd.DataFrame(batch.X, columns=[f"f{i}" for i in range(batch.d)])
    frame.insert(0, ORDINAL_COLUMN, batch.ordinals)
    if batch.labels is not None:
        frame[label_column] = batch.labels.astype(int)
    frame.to_csv(path, index=False)
    return path


def load_stream(path, spec: WindowSpec, label_column: Optional[str] = None) -> WindowedStream:
    label_column = label_column or settings.label_column
    dataset = load_csv(path, label_column)
    frame = pd.read_csv(path, usecols=[ORDINAL_COLUMN])
    ordinals = frame[ORDINAL_COLUMN].to_numpy(dtype=int)
    if not np.array_equal(ordinals, np.arange(len(ordinals))):
        raise StreamError(f"{path}: ordinals must be contiguous from 0")
    return WindowedStream(Batch(ordinals, dataset.X, dataset.labels), spec, name=dataset.name)


# ── Stream synthesis ─────────────────────────────────────────────────────────

def stratification_step(anomaly_ratio: float) -> int:
    """round(1/ratio), half rounded up."""
    return max(1, math.floor(1.0 / anomaly_ratio + 0.5))


def _anomaly_positions(n: int, n_anomalies: int, step: int) -> np.ndarray:
    slots = min(n_anomalies, n // step)
    if slots == 0:
        raise StreamError(f"stream of {n} samples has no room for a step of {step}")
    positions = [k * step + step - 1 for k in range(slots)]
    extras = n_anomalies - slots
    if extras > slots * (step - 1):
        raise StreamError(f"cannot stratify {n_anomalies} anomalies at step {step} in {n} samples")
    # Leftover anomalies go round-robin over the slotted blocks, filling each block backwards.
    for j in range(extras):
        block, depth = j % slots, j // slots
        positions.append(block * step + step - 2 - depth)
    return np.sort(np.array(positions, dtype=int))


def generate_stream(dataset: Dataset, spec: WindowSpec, seed: int = 0) -> WindowedStream:
    normals = np.flatnonzero(~dataset.labels)
    anomalies = np.flatnonzero(dataset.labels)
    if len(anomalies) == 0:
        raise StreamError(f"dataset {dataset.name} has no anomalies to stratify")
    if len(normals) == 0:
        raise StreamError(f"dataset {dataset.name} has no normal samples")

    rng = np.random.default_rng(seed)
    normals = rng.permutation(normals)
    anomalies = rng.permutation(anomalies)

    step = stratification_step(dataset.anomaly_ratio)
    positions = _anomaly_positions(dataset.n, len(anomalies), step)
    order = np.empty(dataset.n, dtype=int)
    is_anomaly_slot = np.zeros(dataset.n, dtype=bool)
    is_anomaly_slot[positions] = True
    order[is_anomaly_slot] = anomalies
    order[~is_anomaly_slot] = normals

    lacks = spec.size < step
    if lacks:
        logger.warning(
            "%s: window size %d below stratification step %d, some windows may lack anomalies",
            dataset.name, spec.size, step,
        )
    batch = Batch.from_arrays(dataset.X[order], dataset.labels[order])
    return WindowedStream(batch, spec, name=dataset.name, lacks_anomalies=lacks)


def partition(stream: WindowedStream, fractions: Optional[Sequence[float]] = None) -> StreamPartition:
    fractions = tuple(fractions or settings.fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise StreamError(f"fractions must be three positive numbers, got {fractions}")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-6):
        raise StreamError(f"fractions must sum to 1, got {sum(fractions):.6f}")

    n = len(stream.windows)
    if n < 3:
        raise StreamError(f"{stream.name}: {n} windows cannot form train/val/test parts")

    train_end = math.floor(fractions[0] * n + 1e-9)
    val_end = math.floor((fractions[0] + fractions[1]) * n + 1e-9)
    train_end = min(max(train_end, 1), n - 2)
    val_end = min(max(val_end, train_end + 1), n - 1)

    parts = StreamPartition(range(0, train_end), range(train_end, val_end), range(val_end, n))
    stream.partition = parts
    return parts


# ── Synthetic subspace anomalies ────────────────────────────────────────────

def _check_subspaces(d_total: int, subspaces: Sequence[Sequence[int]]) -> list[np.ndarray]:
    if not subspaces:
        raise StreamError("at least one relevant subspace is required")
    checked, used = [], set()
    for sub in subspaces:
        sub = np.asarray(sorted(sub), dtype=int)
        if not 2 <= len(sub) <= 5:
            raise StreamError(f"subspace {sub.tolist()} must have 2 to 5 features")
        if sub.min() < 0 or sub.max() >= d_total:
            raise StreamError(f"subspace {sub.tolist()} outside [0, {d_total})")
        if used & set(sub.tolist()):
            raise StreamError(
                f"subspace {sub.tolist()} overlaps another subspace; "
                f"{d_total} features are insufficient for disjoint anomaly placement"
            )
        used |= set(sub.tolist())
        checked.append(sub)
    return checked


def generate_subspace_dataset(
    n_normal: int,
    n_anomalies: int,
    d_total: int,
    relevant_subspaces: Sequence[Sequence[int]],
    seed: int = 0,
) -> Dataset:
    """
    Normals form correlated Gaussian clusters inside each relevant subspace and
    uniform noise elsewhere. Each anomaly copies a normal and is then pushed
    across the correlation axis of exactly one subspace, so it only stands out
    when that subspace is viewed jointly.
    """
    if n_normal < 1 or n_anomalies < 1:
        raise StreamError("need at least one normal and one anomaly")
    subspaces = _check_subspaces(d_total, relevant_subspaces)
    rng = np.random.default_rng(seed)

    X = rng.uniform(0.0, 1.0, size=(n_normal, d_total))
    for sub in subspaces:
        k = len(sub)
        cov = SUBSPACE_SIGMA ** 2 * ((1 - SUBSPACE_RHO) * np.eye(k) + SUBSPACE_RHO * np.ones((k, k)))
        centers = rng.uniform(0.25, 0.75, size=(SUBSPACE_CLUSTERS, k))
        membership = rng.integers(0, SUBSPACE_CLUSTERS, size=n_normal)
        X[:, sub] = centers[membership] + rng.multivariate_normal(np.zeros(k), cov, size=n_normal)

    A = X[rng.integers(0, n_normal, size=n_anomalies)].copy()
    for i in range(n_anomalies):
        sub = subspaces[i % len(subspaces)]
        direction = rng.standard_normal(len(sub))
        direction -= direction.mean()
        norm = np.linalg.norm(direction)
        if norm == 0:
            direction = np.array([1.0, -1.0] + [0.0] * (len(sub) - 2))
            norm = np.sqrt(2.0)
        A[i, sub] += ANOMALY_OFFSET * direction / norm

    labels = np.concatenate([np.zeros(n_normal, dtype=bool), np.ones(n_anomalies, dtype=bool)])
    return Dataset(f"subspace_d{d_total}_s{seed}", np.vstack([X, A]), labels)
