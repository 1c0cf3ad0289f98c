"""
Density detectors: randomized subspace hashing (RS-Hash) and grid-based
kernel density with stationary region skipping (STARE).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.spatial.distance import cdist

from app.core.errors import DetectorError
from app.core.stream import Batch, ScoreOrientation, WindowSpec, WindowType
from app.services.detectors.base import StreamDetector
from app.services.sketch import make_counter

logger = logging.getLogger(__name__)


# ── RS-Hash ──────────────────────────────────────────────────────────────────

def subspace_bounds(f: float, s: int) -> tuple[float, float]:
    """Interval the subspace dimensionality is drawn from, for locality f and sample size s."""
    base = max(2.0, 1.0 / f)
    hi = math.log(max(s, 1)) / math.log(base)
    lo = 1 + 0.5 * hi
    return min(lo, hi), max(lo, hi)


def draw_subspace_size(f: float, s: int, d: int, rng: np.random.Generator) -> int:
    lo, hi = subspace_bounds(f, s)
    r = int(round(rng.uniform(lo, hi))) if hi > lo else int(round(lo))
    return min(max(r, 1), d)


def draw_locality(s: int, rng: np.random.Generator) -> float:
    root = math.sqrt(max(s, 1))
    lo, hi = 1 / root, 1 - 1 / root
    if hi <= lo:
        return 0.5
    return float(rng.uniform(lo, hi))


@dataclass
class SubspaceHash:
    """One repetition: a feature subspace, a grid locality and h hashed histograms."""

    features: np.ndarray
    locality: float
    shifts: np.ndarray
    counter: Any

    def keys(self, U: np.ndarray) -> np.ndarray:
        """Grid keys over the full feature range; unused features are encoded as -1."""
        keys = np.full(U.shape, -1, dtype=np.int64)
        keys[:, self.features] = np.floor((U[:, self.features] + self.shifts) / self.locality)
        return keys

    def min_counts(self, U: np.ndarray) -> np.ndarray:
        return np.array([self.counter.estimate(key) for key in self.keys(U)], dtype=float)

    def add(self, U: np.ndarray, count: int = 1):
        for key in self.keys(U):
            self.counter.add(key, count)


class RSHash(StreamDetector):
    """
    Ensemble of m grid histograms, each on a random subspace of a random
    subsample. Every histogram keeps h hashed counts (a count-min sketch of
    depth h), so the minimum over the h tables is the sketch estimate.
    """

    name = "rshash"
    ORIENTATION = ScoreOrientation.LOWER_IS_ANOMALOUS
    WINDOW_TYPE = WindowType.SLIDING
    DETERMINISTIC = True

    def __init__(
        self,
        window: WindowSpec,
        seed: int = 0,
        n_hashes: int = 4,
        n_repetitions: int = 25,
        sample_size: int = 256,
        exact: bool = False,
        cms_width: Optional[int] = None,
    ):
        super().__init__(window, seed)
        if n_hashes < 1 or n_repetitions < 1 or sample_size < 1:
            raise DetectorError("rshash: n_hashes, n_repetitions and sample_size must be at least 1")
        self.n_hashes = int(n_hashes)
        self.n_repetitions = int(n_repetitions)
        self.sample_size = int(sample_size)
        self.exact = exact
        self.cms_width = cms_width
        self.repetitions: list[SubspaceHash] = []
        self.f_min: Optional[np.ndarray] = None
        self.f_range: Optional[np.ndarray] = None
        self.cache: dict[int, float] = {}

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_hashes": self.n_hashes, "n_repetitions": self.n_repetitions}

    def normalize(self, X: np.ndarray) -> np.ndarray:
        """Min-max scaling with the training extent; constant features map to 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            U = np.where(self.f_range > 0, (X - self.f_min) / self.f_range, 0.0)
        return np.clip(U, 0.0, 1.0)

    def _fit(self, samples: Batch) -> None:
        X = samples.X
        self.f_min = X.min(axis=0)
        self.f_range = X.max(axis=0) - self.f_min
        U = self.normalize(X)
        s = min(self.sample_size, len(samples))
        self.repetitions = []
        for i in range(self.n_repetitions):
            rows = self.rng.choice(len(samples), size=s, replace=False)
            f = draw_locality(s, self.rng)
            r = draw_subspace_size(f, s, samples.d, self.rng)
            features = np.sort(self.rng.choice(samples.d, size=r, replace=False))
            shifts = self.rng.uniform(0, f, size=r)
            counter = make_counter(self.exact, self.n_hashes, self.cms_width, self.seed * 1009 + i)
            rep = SubspaceHash(features, f, shifts, counter)
            rep.add(U[rows])
            self.repetitions.append(rep)
        self.cache = {}

    def score_normalized(self, U: np.ndarray) -> np.ndarray:
        terms = [np.log2(rep.min_counts(U) + 1) for rep in self.repetitions]
        return np.mean(terms, axis=0)

    def _insert(self, samples: Batch):
        """Score each sample, then count it."""
        U = self.normalize(samples.X)
        for i, ordinal in enumerate(samples.ordinals):
            row = U[i: i + 1]
            self.cache[int(ordinal)] = float(self.score_normalized(row)[0])
            for rep in self.repetitions:
                rep.add(row)

    def _forget(self, samples: Batch):
        U = self.normalize(samples.X)
        for i, ordinal in enumerate(samples.ordinals):
            if self.cache.pop(int(ordinal), None) is None:
                continue
            for rep in self.repetitions:
                rep.add(U[i: i + 1], -1)

    def _prime(self, window: Batch) -> None:
        self._insert(window)

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        self._forget(expired)
        self._insert(arriving)
        return np.array([self.cache[int(o)] for o in self.content.ordinals])


# ── STARE ────────────────────────────────────────────────────────────────────

@dataclass
class GridCell:
    """Live statistics of one non-empty cell plus the snapshot densities are computed from."""

    total: np.ndarray
    weight: int = 0
    pending: int = 0
    center: Optional[np.ndarray] = None
    published_weight: int = 0
    members: set = field(default_factory=set)

    def snapshot(self):
        self.center = self.total / self.weight
        self.published_weight = self.weight
        self.pending = 0


class STARE(StreamDetector):
    """
    Grid-approximated kernel density over a sliding window.

    Cells have side θ_R/√d so their diagonal is θ_R, and each non-empty cell
    is summarized by the centroid of its samples weighted by its count. A
    cell's snapshot is refreshed only once its accumulated weight change
    exceeds γ times its snapshot weight; samples whose neighborhood snapshot
    did not change keep their cached score.
    """

    name = "stare"
    ORIENTATION = ScoreOrientation.HIGHER_IS_ANOMALOUS
    WINDOW_TYPE = WindowType.SLIDING
    DETERMINISTIC = True

    def __init__(
        self,
        window: WindowSpec,
        seed: int = 0,
        cell_diagonal: float = 1.0,
        n_centers: int = 5,
        skip_threshold: float = 0.01,
        top_n: Optional[int] = None,
    ):
        super().__init__(window, seed)
        if cell_diagonal <= 0:
            raise DetectorError(f"stare: cell_diagonal must be positive, got {cell_diagonal}")
        if n_centers < 1:
            raise DetectorError(f"stare: n_centers must be at least 1, got {n_centers}")
        if not 0 <= skip_threshold <= 1:
            raise DetectorError(f"stare: skip_threshold must lie in [0, 1], got {skip_threshold}")
        self.cell_diagonal = float(cell_diagonal)
        self.n_centers = int(n_centers)
        self.skip_threshold = float(skip_threshold)
        self.top_n = top_n
        self.cells: dict[tuple, GridCell] = {}
        self.cell_of: dict[int, tuple] = {}
        self.points: dict[int, np.ndarray] = {}
        self.scores: dict[int, float] = {}
        self.neighborhood: dict[int, tuple[frozenset, float]] = {}
        self.center_density: dict[tuple, float] = {}
        self.recomputed: set[int] = set()

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"cell_diagonal": self.cell_diagonal, "n_centers": self.n_centers}

    def side(self, d: int) -> float:
        return self.cell_diagonal / math.sqrt(d)

    def cell_id(self, x: np.ndarray) -> tuple:
        return tuple(np.floor(x / self.side(len(x))).astype(np.int64).tolist())

    def weight_total(self) -> int:
        return sum(cell.weight for cell in self.cells.values())

    # ── grid maintenance ────────────────────────────────────────────────────

    def _add(self, ordinal: int, x: np.ndarray):
        cid = self.cell_id(x)
        cell = self.cells.get(cid)
        if cell is None:
            cell = self.cells[cid] = GridCell(total=np.zeros_like(x))
        cell.total = cell.total + x
        cell.weight += 1
        cell.pending += 1
        cell.members.add(ordinal)
        self.cell_of[ordinal] = cid
        self.points[ordinal] = x

    def _remove(self, ordinal: int):
        cid = self.cell_of.pop(ordinal, None)
        if cid is None:
            return
        x = self.points.pop(ordinal)
        self.scores.pop(ordinal, None)
        self.neighborhood.pop(ordinal, None)
        cell = self.cells[cid]
        cell.total = cell.total - x
        cell.weight -= 1
        cell.pending += 1
        cell.members.discard(ordinal)
        if cell.weight == 0:
            del self.cells[cid]

    def _refresh_cells(self) -> set[tuple]:
        """Snapshot cells whose accumulated change exceeds γ; returns the changed ids."""
        changed = set()
        for cid, cell in self.cells.items():
            if cell.center is None or cell.pending > self.skip_threshold * cell.published_weight:
                cell.snapshot()
                changed.add(cid)
        gone = set(self.center_density) - set(self.cells)
        return changed | gone

    # ── density ─────────────────────────────────────────────────────────────

    def _kernel(self, sq_dist: np.ndarray, d: int) -> np.ndarray:
        # Gaussian product kernel without its normalizing constant; the score
        # is a ratio of densities so the constant cancels.
        h = self.side(d)
        return np.exp(-sq_dist / (2 * h * h))

    def _densities(self, Q: np.ndarray, ids: list, centers: np.ndarray, weights: np.ndarray):
        """Densities at Q over the θ_k nearest centers, with those neighbors and the k-th distance."""
        k = min(self.n_centers, len(ids))
        sq = cdist(Q, centers, "sqeuclidean")
        nearest = np.argsort(sq, axis=1, kind="stable")[:, :k]
        rows = np.arange(len(Q))[:, None]
        w = weights[nearest]
        dens = (w / w.sum(axis=1, keepdims=True) * self._kernel(sq[rows, nearest], Q.shape[1])).sum(axis=1)
        kth = np.sqrt(sq[rows[:, 0], nearest[:, -1]])
        return dens, nearest, kth

    def _rescore(self, changed: set[tuple]):
        ids = list(self.cells)
        centers = np.array([self.cells[c].center for c in ids])
        weights = np.array([self.cells[c].published_weight for c in ids], dtype=float)
        dens_c, _, _ = self._densities(centers, ids, centers, weights)
        center_density = dict(zip(ids, dens_c))
        moved = {c for c in ids if self.center_density.get(c) != center_density[c]}
        self.center_density = center_density

        stale = [o for o in self.points if self._needs_rescore(o, changed | moved, centers, ids)]
        self.recomputed = set(stale)
        if not stale:
            return
        Q = np.array([self.points[o] for o in stale])
        dens, nearest, kth = self._densities(Q, ids, centers, weights)
        for i, o in enumerate(stale):
            neighbor_ids = [ids[j] for j in nearest[i]]
            local = np.array([center_density[c] for c in neighbor_ids])
            sigma = local.std()
            self.scores[o] = 0.0 if sigma == 0 else float((local.mean() - dens[i]) / sigma)
            self.neighborhood[o] = (frozenset(neighbor_ids), float(kth[i]))

    def _needs_rescore(self, ordinal: int, changed: set, centers: np.ndarray, ids: list) -> bool:
        cached = self.neighborhood.get(ordinal)
        if cached is None:
            return True
        neighbor_ids, kth = cached
        if neighbor_ids & changed or len(neighbor_ids) < min(self.n_centers, len(ids)):
            return True
        # a changed cell whose center now lies inside the cached radius joins the neighborhood
        x = self.points[ordinal]
        for j, cid in enumerate(ids):
            if cid in changed and cid not in neighbor_ids and np.linalg.norm(centers[j] - x) <= kth:
                return True
        return False

    # ── life-cycle ──────────────────────────────────────────────────────────

    def _prime(self, window: Batch) -> None:
        self.cells, self.cell_of, self.points = {}, {}, {}
        self.scores, self.neighborhood, self.center_density = {}, {}, {}
        for ordinal, x in zip(window.ordinals, window.X):
            self._add(int(ordinal), x)
        self._rescore(self._refresh_cells())

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        for ordinal in expired.ordinals:
            self._remove(int(ordinal))
        for ordinal, x in zip(arriving.ordinals, arriving.X):
            self._add(int(ordinal), x)
        self._rescore(self._refresh_cells())
        return self.window_scores()

    def window_scores(self) -> np.ndarray:
        return np.array([self.scores[int(o)] for o in self.content.ordinals])

    def top_anomalies(self, n: Optional[int] = None) -> list[int]:
        """Ordinals of the n highest-scoring samples, highest first, ties by ordinal."""
        n = n if n is not None else (self.top_n or 1)
        ordinals = self.content.ordinals
        scores = self.window_scores()
        order = np.lexsort((ordinals, -scores))
        return [int(ordinals[i]) for i in order[:n]]
