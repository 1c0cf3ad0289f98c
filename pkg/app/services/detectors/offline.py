"""
Offline baselines working on one large window: KNN_W, LOF, Isolation Forest,
One-Class Random Forest, and batch variants of LODA and XSTREAM.

Each detector fits on the train partition (anomalies included) and scores the
test portion in a single call.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from sklearn.ensemble import IsolationForest
from sklearn.neighbors import NearestNeighbors

from app.core.errors import DetectorError
from app.core.stream import Batch, ScoreOrientation
from app.services.detectors.base import BatchDetector
from app.services.detectors.projection import DensityRule, HalfSpaceChains, LodaEnsemble, XStreamModel, loda_projections
from app.services.detectors.trees import default_depth

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649
LOF_EPSILON = 1e-12


def average_path_length(n) -> np.ndarray:
    """c(n) = 2(ln(n − 1) + γ) − 2(n − 1)/n, with c(n) = 0 for n ≤ 1."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 1
    out[big] = 2 * (np.log(n[big] - 1) + EULER_GAMMA) - 2 * (n[big] - 1) / n[big]
    return out


def _check_neighbors(k: int, n: int, name: str):
    if k < 1 or k >= n:
        raise DetectorError(f"{name}: n_neighbors must lie in [1, {n - 1}], got {k}")


# ── Neighbor based ───────────────────────────────────────────────────────────

class KNNW(BatchDetector):
    """Distance to the K-th nearest training neighbor."""

    name = "knnw"

    def __init__(self, seed: int = 0, n_neighbors: int = 10):
        super().__init__(seed)
        self.n_neighbors = int(n_neighbors)
        self.index: Optional[NearestNeighbors] = None

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_neighbors": self.n_neighbors}

    def _fit(self, X: np.ndarray) -> None:
        _check_neighbors(self.n_neighbors, len(X), self.name)
        self.index = NearestNeighbors(n_neighbors=self.n_neighbors, algorithm="brute").fit(X)

    def _score(self, X: np.ndarray) -> np.ndarray:
        dist, _ = self.index.kneighbors(X)
        return dist[:, -1]

    def fit_score(self, samples: Batch) -> np.ndarray:
        """Scores of the training samples themselves; a sample is not its own neighbor."""
        self.fit(samples)
        dist, _ = self.index.kneighbors()
        return dist[:, -1]


class LOF(BatchDetector):
    """
    Local outlier factor over the k nearest training neighbors.

    lrd(p) = 1 / (mean reach-dist + ε), reach-dist(p, o) = max(d(p, o), k-dist(o)),
    and the score is the neighbors' mean lrd over lrd(p).
    """

    name = "lof"

    def __init__(self, seed: int = 0, n_neighbors: int = 10):
        super().__init__(seed)
        self.n_neighbors = int(n_neighbors)
        self.index: Optional[NearestNeighbors] = None
        self.k_distance: Optional[np.ndarray] = None
        self.train_lrd: Optional[np.ndarray] = None

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_neighbors": self.n_neighbors}

    def _fit(self, X: np.ndarray) -> None:
        _check_neighbors(self.n_neighbors, len(X), self.name)
        self.index = NearestNeighbors(n_neighbors=self.n_neighbors, algorithm="brute").fit(X)
        dist, idx = self.index.kneighbors()
        self.k_distance = dist[:, -1]
        self.train_lrd = self._lrd(dist, idx)

    def _lrd(self, dist: np.ndarray, idx: np.ndarray) -> np.ndarray:
        reach = np.maximum(dist, self.k_distance[idx])
        return 1.0 / (reach.mean(axis=1) + LOF_EPSILON)

    def _factor(self, dist: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return self.train_lrd[idx].mean(axis=1) / self._lrd(dist, idx)

    def _score(self, X: np.ndarray) -> np.ndarray:
        return self._factor(*self.index.kneighbors(X))

    def fit_score(self, samples: Batch) -> np.ndarray:
        """Scores of the training samples themselves; a sample is not its own neighbor."""
        self.fit(samples)
        return self._factor(*self.index.kneighbors())


# ── Isolation based ──────────────────────────────────────────────────────────

class IForest(BatchDetector):
    """Isolation Forest; scores are 2^(−E(h)/c(n)) in (0, 1)."""

    name = "iforest"
    DETERMINISTIC = False

    def __init__(self, seed: int = 0, n_trees: int = 100, max_samples: int = 256):
        super().__init__(seed)
        self.n_trees = int(n_trees)
        self.max_samples = int(max_samples)
        self.model: Optional[IsolationForest] = None

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_trees": self.n_trees, "max_samples": self.max_samples}

    def _fit(self, X: np.ndarray) -> None:
        self.model = IsolationForest(
            n_estimators=self.n_trees,
            max_samples=min(self.max_samples, len(X)),
            random_state=self.seed,
        ).fit(X)

    def _score(self, X: np.ndarray) -> np.ndarray:
        return -self.model.score_samples(X)


def one_class_gini_proxy(n_left, n_right, lam_left, lam_right, gamma: float = 1.0):
    """One-class Gini improvement proxy; outliers in a node are assumed to number γ·n_t."""
    n_left = np.asarray(n_left, dtype=float)
    n_right = np.asarray(n_right, dtype=float)
    n_t = n_left + n_right
    out_l = gamma * n_t * np.asarray(lam_left, dtype=float)
    out_r = gamma * n_t * np.asarray(lam_right, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(n_left + out_l > 0, n_left * out_l / (n_left + out_l), 0.0)
        right = np.where(n_right + out_r > 0, n_right * out_r / (n_right + out_r), 0.0)
    return left + right


@dataclass
class OCNode:
    depth: int
    size: int
    feature: int = -1
    threshold: float = 0.0
    left: Optional["OCNode"] = None
    right: Optional["OCNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def best_split(X: np.ndarray, lows: np.ndarray, highs: np.ndarray, features: np.ndarray, gamma: float = 1.0):
    """(feature, threshold, proxy) minimizing the proxy; samples with x ≤ threshold go left."""
    best = None
    n = len(X)
    for q in features:
        width = highs[q] - lows[q]
        if width <= 0:
            continue
        values = np.unique(X[:, q])
        if len(values) < 2:
            continue
        thresholds = values[:-1]
        n_left = np.searchsorted(np.sort(X[:, q]), thresholds, side="right")
        lam_left = (thresholds - lows[q]) / width
        proxy = one_class_gini_proxy(n_left, n - n_left, lam_left, 1 - lam_left, gamma)
        i = int(np.argmin(proxy))
        if best is None or proxy[i] < best[2]:
            best = (int(q), float(thresholds[i]), float(proxy[i]))
    return best


class OneClassTree:
    def __init__(self, X: np.ndarray, features: np.ndarray, max_depth: int, gamma: float = 1.0):
        self.features = features
        self.max_depth = max_depth
        self.gamma = gamma
        lows, highs = X.min(axis=0), X.max(axis=0)
        self.root = self._grow(X, lows, highs, 0)

    def _grow(self, X: np.ndarray, lows: np.ndarray, highs: np.ndarray, depth: int) -> OCNode:
        node = OCNode(depth=depth, size=len(X))
        if depth >= self.max_depth or len(X) <= 1:
            return node
        split = best_split(X, lows, highs, self.features, self.gamma)
        if split is None:
            return node
        q, threshold, _ = split
        mask = X[:, q] <= threshold
        left_hi, right_lo = highs.copy(), lows.copy()
        left_hi[q] = threshold
        right_lo[q] = threshold
        node.feature, node.threshold = q, threshold
        node.left = self._grow(X[mask], lows, left_hi, depth + 1)
        node.right = self._grow(X[~mask], right_lo, highs, depth + 1)
        return node

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        for i, x in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if x[node.feature] <= node.threshold else node.right
            out[i] = node.depth + average_path_length(node.size)
        return out


class OCRF(BatchDetector):
    """
    One-Class Random Forest. Trees split where the one-class Gini proxy is
    minimal, with volume shares measured against each node's bounding box.
    When the root volume overflows no split can be rated and the run is
    flagged degenerate with uniform scores.
    """

    name = "ocrf"
    DETERMINISTIC = False
    VOLUME_LIMIT = 1e308

    def __init__(self, seed: int = 0, n_trees: int = 100, max_samples: int = 256,
                 max_features: Optional[int] = None, gamma: float = 1.0):
        super().__init__(seed)
        self.n_trees = int(n_trees)
        self.max_samples = int(max_samples)
        self.max_features = max_features
        self.gamma = gamma
        self.trees: list[OneClassTree] = []
        self.degenerate = False
        self.n_fit = 0

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_trees": self.n_trees, "max_samples": self.max_samples}

    def _fit(self, X: np.ndarray) -> None:
        ranges = X.max(axis=0) - X.min(axis=0)
        positive = ranges[ranges > 0]
        with np.errstate(over="ignore"):
            volume = float(np.prod(positive)) if len(positive) else 0.0
        self.trees = []
        self.degenerate = not math.isfinite(volume) or volume > self.VOLUME_LIMIT
        if self.degenerate:
            logger.warning("ocrf: feature-space volume overflows, returning uniform scores")
            return
        n, d = X.shape
        self.n_fit = min(self.max_samples, n)
        n_features = min(d, self.max_features or d)
        depth = default_depth(self.n_fit)
        for _ in range(self.n_trees):
            rows = self.rng.choice(n, size=self.n_fit, replace=False)
            features = np.sort(self.rng.choice(d, size=n_features, replace=False))
            self.trees.append(OneClassTree(X[rows], features, depth, self.gamma))

    def _score(self, X: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.full(len(X), 0.5)
        mean_path = np.mean([tree.path_lengths(X) for tree in self.trees], axis=0)
        c = float(average_path_length(self.n_fit))
        if c == 0:
            return np.full(len(X), 0.5)
        return 2.0 ** (-mean_path / c)


# ── Projection based ─────────────────────────────────────────────────────────

class LODABatch(BatchDetector):
    name = "loda_batch"
    ORIENTATION = ScoreOrientation.LOWER_IS_ANOMALOUS
    DETERMINISTIC = False

    def __init__(self, seed: int = 0, n_projections: int = 50, n_bins: int = 20,
                 density_rule: str = DensityRule.TRAPEZOID):
        super().__init__(seed)
        self.n_projections = int(n_projections)
        self.n_bins = int(n_bins)
        self.density_rule = DensityRule(density_rule)
        self.ensemble: Optional[LodaEnsemble] = None

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_projections": self.n_projections, "n_bins": self.n_bins}

    def _fit(self, X: np.ndarray) -> None:
        W = loda_projections(X.shape[1], self.n_projections, self.rng)
        self.ensemble = LodaEnsemble(W, self.n_bins, self.density_rule)
        self.ensemble.insert(X)

    def _score(self, X: np.ndarray) -> np.ndarray:
        return self.ensemble.score(X)


class XSTREAMBatch(BatchDetector):
    name = "xstream_batch"
    ORIENTATION = ScoreOrientation.LOWER_IS_ANOMALOUS
    DETERMINISTIC = False

    def __init__(self, seed: int = 0, n_projections: int = 50, n_chains: int = 50, depth: int = 10,
                 exact: bool = False):
        super().__init__(seed)
        self.n_projections = int(n_projections)
        self.n_chains = int(n_chains)
        self.depth = int(depth)
        self.exact = exact
        self.model: Optional[XStreamModel] = None
        self.counters: list = []

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_projections": self.n_projections, "n_chains": self.n_chains, "depth": self.depth}

    def _fit(self, X: np.ndarray) -> None:
        chains = HalfSpaceChains.build(X, self.n_projections, self.n_chains, self.depth, self.rng)
        self.model = XStreamModel(chains, exact=self.exact, seed=self.seed)
        self.counters = self.model.fresh_counters()
        self.model.count(X, self.counters)

    def _score(self, X: np.ndarray) -> np.ndarray:
        return self.model.score(X, self.counters)
