"""
Detector registry: every detector with its hyper-parameter grid.

Grids that depend on the data (distance thresholds, sample budgets) are
computed from the training samples of the dataset being tuned.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np
from scipy.spatial.distance import pdist

from app.core.errors import DetectorError
from app.core.stream import ScoreOrientation, WindowSpec, WindowType
from app.services.detectors.base import BatchDetector, StreamDetector
from app.services.detectors.density import STARE, RSHash
from app.services.detectors.offline import IForest, KNNW, LOF, LODABatch, OCRF, XSTREAMBatch
from app.services.detectors.projection import LODA, XSTREAM
from app.services.detectors.proximity import CPOD, LEAP, MCOD
from app.services.detectors.trees import HST, HSTF, RRCF, default_depth

Grid = dict[str, list]
Detector = Union[StreamDetector, BatchDetector]

# ── Fixed grid values ────────────────────────────────────────────────────────

TREE_COUNTS = [25, 50, 100]
FORGET_THRESHOLDS = [64, 128, 256, 512]
NEIGHBOR_COUNTS = [5, 10, 15, 20, 30, 50, 100, 150]
CHAIN_COUNTS = [25, 50, 100]
PROJECTION_SIZES = [25, 50, 100]
CHAIN_DEPTHS = [5, 10, 15]
LODA_PROJECTIONS = [25, 50, 100]
LODA_BINS = [10, 20, 40]
HASH_TABLES = [4, 8, 12]
HASH_ITERATIONS = [25, 50, 100]
MAX_SAMPLES_SHARE = 0.4
MAX_SAMPLES_CAP = 256
STARE_SKIP_THRESHOLD = 0.01
GRID_POINTS = 100
DISTANCE_SUBSAMPLE = 500


def max_samples_for(n_train: int) -> int:
    return max(2, min(MAX_SAMPLES_CAP, int(math.floor(MAX_SAMPLES_SHARE * n_train))))


def max_distance_grid(X: np.ndarray, points: int = GRID_POINTS) -> list[float]:
    """Evenly spaced radii from 0.1 up to the 5%–95% spread of pairwise distances."""
    if len(X) > DISTANCE_SUBSAMPLE:
        rows = np.random.default_rng(0).choice(len(X), size=DISTANCE_SUBSAMPLE, replace=False)
        X = X[rows]
    if len(X) < 2:
        return [1.0]
    dist = pdist(X)
    upper = float(np.percentile(dist, 95) - np.percentile(dist, 5))
    if upper <= 0:
        upper = float(dist.max()) or 1.0
    lower = 0.1 if upper > 0.1 else upper / points
    return [float(v) for v in np.linspace(lower, upper, points)]


def min_neighbors_grid(points: int = GRID_POINTS, top: int = 64) -> list[int]:
    return [int(v) for v in np.unique(np.rint(np.linspace(1, top, points)).astype(int))]


def _forget_grid(n_train: int) -> list[int]:
    return sorted(set(FORGET_THRESHOLDS + [max_samples_for(n_train)]))


def _neighbor_grid(n_train: int) -> list[int]:
    usable = [k for k in NEIGHBOR_COUNTS if k < n_train]
    return usable or [max(1, n_train - 1)]


# ── Registry ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DetectorInfo:
    name: str
    cls: type
    online: bool
    grid: Callable[[np.ndarray], Grid]
    fixed: Callable[[np.ndarray], dict[str, Any]] = field(default=lambda X: {})

    @property
    def orientation(self) -> ScoreOrientation:
        return self.cls.ORIENTATION

    @property
    def deterministic(self) -> bool:
        return self.cls.DETERMINISTIC

    @property
    def window_type(self) -> Optional[WindowType]:
        return self.cls.WINDOW_TYPE if self.online else None

    def window_for(self, spec: WindowSpec) -> WindowSpec:
        return spec.tumbling() if self.window_type == WindowType.TUMBLING else spec


def _proximity_grid(X: np.ndarray) -> Grid:
    return {"max_distance": max_distance_grid(X), "min_neighbors": min_neighbors_grid()}


def _depth_for(X: np.ndarray) -> dict[str, Any]:
    return {"max_depth": default_depth(max_samples_for(len(X)))}


def _samples_for(X: np.ndarray) -> dict[str, Any]:
    return {"max_samples": max_samples_for(len(X))}


REGISTRY: dict[str, DetectorInfo] = {
    info.name: info
    for info in [
        DetectorInfo("mcod", MCOD, True, _proximity_grid),
        DetectorInfo("cpod", CPOD, True, _proximity_grid),
        DetectorInfo("leap", LEAP, True, _proximity_grid),
        DetectorInfo("hst", HST, True, lambda X: {"n_trees": TREE_COUNTS}, _depth_for),
        DetectorInfo(
            "hstf", HSTF, True,
            lambda X: {"n_trees": TREE_COUNTS, "forget_threshold": _forget_grid(len(X))},
            _depth_for,
        ),
        DetectorInfo(
            "rrcf", RRCF, True,
            lambda X: {"n_trees": TREE_COUNTS, "forget_threshold": _forget_grid(len(X))},
            _samples_for,
        ),
        DetectorInfo("loda", LODA, True, lambda X: {"n_projections": LODA_PROJECTIONS, "n_bins": LODA_BINS}),
        DetectorInfo(
            "xstream", XSTREAM, True,
            lambda X: {"n_chains": CHAIN_COUNTS, "n_projections": PROJECTION_SIZES, "depth": CHAIN_DEPTHS},
        ),
        DetectorInfo(
            "rshash", RSHash, True,
            lambda X: {"n_hashes": HASH_TABLES, "n_repetitions": HASH_ITERATIONS},
            lambda X: {"sample_size": max_samples_for(len(X))},
        ),
        DetectorInfo(
            "stare", STARE, True,
            lambda X: {"cell_diagonal": max_distance_grid(X), "n_centers": min_neighbors_grid()},
            lambda X: {"skip_threshold": STARE_SKIP_THRESHOLD},
        ),
        DetectorInfo("knnw", KNNW, False, lambda X: {"n_neighbors": _neighbor_grid(len(X))}),
        DetectorInfo("lof", LOF, False, lambda X: {"n_neighbors": _neighbor_grid(len(X))}),
        DetectorInfo("iforest", IForest, False, lambda X: {"n_trees": TREE_COUNTS}, _samples_for),
        DetectorInfo("ocrf", OCRF, False, lambda X: {"n_trees": TREE_COUNTS}, _samples_for),
        DetectorInfo(
            "loda_batch", LODABatch, False,
            lambda X: {"n_projections": LODA_PROJECTIONS, "n_bins": LODA_BINS},
        ),
        DetectorInfo(
            "xstream_batch", XSTREAMBatch, False,
            lambda X: {"n_chains": CHAIN_COUNTS, "n_projections": PROJECTION_SIZES, "depth": CHAIN_DEPTHS},
        ),
    ]
}

ONLINE_DETECTORS = [name for name, info in REGISTRY.items() if info.online]
OFFLINE_DETECTORS = [name for name, info in REGISTRY.items() if not info.online]


def get_detector(name: str) -> DetectorInfo:
    try:
        return REGISTRY[name]
    except KeyError:
        raise DetectorError(f"unknown detector '{name}'") from None


def hyper_grid(name: str, X_train: np.ndarray, overrides: Optional[Grid] = None) -> Grid:
    grid = dict(get_detector(name).grid(X_train))
    for key, values in (overrides or {}).items():
        if not values:
            raise DetectorError(f"{name}: override for '{key}' is empty")
        grid[key] = list(values)
    return grid


def grid_size(grid: Grid) -> int:
    return math.prod(len(v) for v in grid.values())


def build_detector(name: str, params: dict[str, Any], window: WindowSpec, seed: int = 0,
                   X_train: Optional[np.ndarray] = None) -> Detector:
    """Instantiate `name` with `params` on top of its data-dependent fixed values."""
    info = get_detector(name)
    kwargs = dict(info.fixed(X_train)) if X_train is not None else {}
    kwargs.update(params)
    try:
        if info.online:
            return info.cls(info.window_for(window), seed, **kwargs)
        return info.cls(seed, **kwargs)
    except TypeError as exc:
        raise DetectorError(f"{name}: invalid hyper-parameters {sorted(params)}: {exc}") from exc


__all__ = [
    "REGISTRY",
    "ONLINE_DETECTORS",
    "OFFLINE_DETECTORS",
    "DetectorInfo",
    "Detector",
    "BatchDetector",
    "StreamDetector",
    "get_detector",
    "hyper_grid",
    "grid_size",
    "build_detector",
    "max_distance_grid",
    "min_neighbors_grid",
    "max_samples_for",
]
