"""
Tree-ensemble detectors: Half-Space Trees (HST), HST with forgetting (HSTF)
and Robust Random Cut Forest (RRCF).
"""

import hashlib
import logging
import math
from collections import deque
from typing import Any, Iterator, Optional

import numpy as np

from app.core.errors import DetectorError
from app.core.stream import Batch, ScoreOrientation, WindowSpec, WindowType
from app.services.detectors.base import StreamDetector

logger = logging.getLogger(__name__)


def hst_work_range(f_min: float, f_max: float, v: float, unit_scaled: bool = False) -> tuple[float, float]:
    """
    Randomized work range centered at v.
    `unit_scaled` selects the original rule for data bounded in [0, 1]:
    v ± 2·max(v, 1 − v). The default widens by the observed extent instead:
    v ± 2·max(v − F_min, F_max − v).
    """
    if f_min > f_max:
        raise DetectorError(f"feature minimum {f_min} exceeds maximum {f_max}")
    if unit_scaled:
        half = 2 * max(v, 1 - v)
    else:
        half = 2 * max(v - f_min, f_max - v)
    return v - half, v + half


def default_depth(max_samples: int) -> int:
    return max(1, math.ceil(math.log2(max(2, max_samples))))


# ── Half-space trees ─────────────────────────────────────────────────────────

class HalfSpaceTree:
    """
    Perfect binary tree stored heap-style: node i has children 2i+1 and 2i+2.
    Internal nodes carry (feature, split); the 2^h leaves carry mass profiles.
    """

    def __init__(self, features: np.ndarray, splits: np.ndarray, depth: int):
        n_internal = 2 ** depth - 1
        if features.shape != (n_internal,) or splits.shape != (n_internal,):
            raise DetectorError(f"a depth-{depth} tree needs {n_internal} internal nodes")
        self.depth = depth
        self.features = features.astype(int)
        self.splits = splits.astype(float)
        self.mass = np.zeros(2 ** depth, dtype=np.int64)
        self.last_update = np.full(2 ** depth, -1, dtype=np.int64)

    @classmethod
    def build(cls, lows: np.ndarray, highs: np.ndarray, depth: int, rng: np.random.Generator) -> "HalfSpaceTree":
        n_internal = 2 ** depth - 1
        features = np.zeros(n_internal, dtype=int)
        splits = np.zeros(n_internal)
        d = len(lows)
        bounds = {0: (lows.copy(), highs.copy())}
        for node in range(n_internal):
            lo, hi = bounds.pop(node)
            q = int(rng.integers(d))
            split = (lo[q] + hi[q]) / 2
            features[node], splits[node] = q, split
            left_hi, right_lo = hi.copy(), lo.copy()
            left_hi[q] = split
            right_lo[q] = split
            bounds[2 * node + 1] = (lo, left_hi)
            bounds[2 * node + 2] = (right_lo, hi)
        return cls(features, splits, depth)

    @property
    def n_nodes(self) -> int:
        return 2 ** (self.depth + 1) - 1

    @property
    def n_leaves(self) -> int:
        return 2 ** self.depth

    def leaves_of(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            right = X[rows, self.features[idx]] >= self.splits[idx]
            idx = 2 * idx + 1 + right
        return idx - (2 ** self.depth - 1)

    def scores(self, X: np.ndarray) -> np.ndarray:
        return self.mass[self.leaves_of(X)] * float(2 ** self.depth)

    def add(self, X: np.ndarray, window_id: int):
        leaves = self.leaves_of(X)
        np.add.at(self.mass, leaves, 1)
        self.last_update[np.unique(leaves)] = window_id

    def forget(self, excess: int, window_id: int) -> int:
        """Remove `excess` units of mass, oldest-updated leaves first, one unit per leaf per pass."""
        removed = 0
        while removed < excess:
            alive = np.flatnonzero(self.mass > 0)
            if len(alive) == 0:
                break
            stale = alive[self.last_update[alive] < window_id]
            pool = stale if len(stale) else alive
            order = pool[np.lexsort((pool, self.last_update[pool]))]
            take = order[: excess - removed]
            self.mass[take] -= 1
            removed += len(take)
        return removed

    def digest(self) -> str:
        return hashlib.sha1(self.features.tobytes() + self.splits.tobytes()).hexdigest()


class HST(StreamDetector):
    """
    Half-space trees over tumbling windows.

    The tree structure is fixed at training; only leaf masses change. A window
    is scored against the accumulated reference masses and then merged into
    them. Lower scores are more anomalous.
    """

    name = "hst"
    ORIENTATION = ScoreOrientation.LOWER_IS_ANOMALOUS
    WINDOW_TYPE = WindowType.TUMBLING
    DETERMINISTIC = False

    def __init__(
        self,
        window: WindowSpec,
        seed: int = 0,
        n_trees: int = 25,
        max_depth: int = 8,
        unit_scaled: bool = False,
    ):
        super().__init__(window, seed)
        if n_trees < 1 or max_depth < 1:
            raise DetectorError(f"{self.name}: n_trees and max_depth must be at least 1")
        self.n_trees = int(n_trees)
        self.max_depth = int(max_depth)
        self.unit_scaled = unit_scaled
        self.trees: list[HalfSpaceTree] = []
        self.window_id = 0

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth}

    def _fit(self, samples: Batch) -> None:
        X = samples.X
        f_min, f_max = X.min(axis=0), X.max(axis=0)
        self.trees = []
        for _ in range(self.n_trees):
            v = self.rng.uniform(f_min, f_max)
            lows, highs = np.empty_like(v), np.empty_like(v)
            for q in range(len(v)):
                lows[q], highs[q] = hst_work_range(f_min[q], f_max[q], v[q], self.unit_scaled)
            self.trees.append(HalfSpaceTree.build(lows, highs, self.max_depth, self.rng))
        self._absorb(X)

    def _absorb(self, X: np.ndarray):
        for tree in self.trees:
            tree.add(X, self.window_id)
        self.window_id += 1

    def score_samples(self, X: np.ndarray) -> np.ndarray:
        return np.sum([tree.scores(X) for tree in self.trees], axis=0)

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        scores = self.score_samples(self.content.X)
        self._absorb(arriving.X)
        return scores

    def masses(self) -> list[int]:
        return [int(tree.mass.sum()) for tree in self.trees]


class HSTF(HST):
    """HST that forgets: once a tree remembers more than f samples, stale leaves lose mass."""

    name = "hstf"

    def __init__(self, window: WindowSpec, seed: int = 0, n_trees: int = 25, max_depth: int = 8,
                 forget_threshold: Optional[float] = None, unit_scaled: bool = False):
        super().__init__(window, seed, n_trees, max_depth, unit_scaled)
        if forget_threshold is None or math.isinf(forget_threshold):
            self.forget_threshold = math.inf
        else:
            f = int(forget_threshold)
            if f < 1:
                raise DetectorError(f"forget_threshold must be positive, got {forget_threshold}")
            w = window.size
            rounded = max(w, math.ceil(f / w) * w)
            if rounded != f:
                logger.info("hstf: forget threshold %d rounded to %d, a multiple of w=%d", f, rounded, w)
            self.forget_threshold = rounded

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {**super().hyper_params, "forget_threshold": self.forget_threshold}

    def _absorb(self, X: np.ndarray):
        window_id = self.window_id
        super()._absorb(X)
        if math.isinf(self.forget_threshold):
            return
        for tree in self.trees:
            excess = int(tree.mass.sum()) - int(self.forget_threshold)
            if excess > 0:
                tree.forget(excess, window_id)


# ── Robust random cut trees ──────────────────────────────────────────────────

class Leaf:
    __slots__ = ("point", "ordinals", "parent")

    def __init__(self, point: np.ndarray, ordinal: int):
        self.point = point
        self.ordinals = [ordinal]
        self.parent: Optional["Branch"] = None

    @property
    def n(self) -> int:
        return len(self.ordinals)

    @property
    def lo(self) -> np.ndarray:
        return self.point

    @property
    def hi(self) -> np.ndarray:
        return self.point


class Branch:
    __slots__ = ("dim", "cut", "left", "right", "parent", "n", "lo", "hi")

    def __init__(self, dim: int, cut: float, left, right):
        self.dim = dim
        self.cut = cut
        self.left = left
        self.right = right
        self.parent: Optional["Branch"] = None
        left.parent = self
        right.parent = self
        self.n = left.n + right.n
        self.lo = np.minimum(left.lo, right.lo)
        self.hi = np.maximum(left.hi, right.hi)

    def refresh(self):
        self.n = self.left.n + self.right.n
        self.lo = np.minimum(self.left.lo, self.right.lo)
        self.hi = np.maximum(self.left.hi, self.right.hi)


class RandomCutTree:
    """
    One robust random cut tree with replica counts.
    Points with value <= cut on the cut dimension live in the left subtree.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.root = None
        self.leaf_of: dict[int, Leaf] = {}
        self.arrivals: deque[int] = deque()

    def __len__(self) -> int:
        return 0 if self.root is None else self.root.n

    def __contains__(self, ordinal: int) -> bool:
        return ordinal in self.leaf_of

    def _update_up(self, node):
        while node is not None:
            node.refresh()
            node = node.parent

    def _cut(self, lo: np.ndarray, hi: np.ndarray) -> tuple[int, float]:
        span = hi - lo
        r = self.rng.uniform(0, span.sum())
        edges = np.cumsum(span)
        dim = int(np.searchsorted(edges, r, side="right"))
        dim = min(dim, len(span) - 1)
        while span[dim] == 0:
            dim -= 1
        before = edges[dim - 1] if dim > 0 else 0.0
        return dim, float(lo[dim] + (r - before))

    def insert(self, point: np.ndarray, ordinal: int) -> Leaf:
        point = np.asarray(point, dtype=float)
        if ordinal in self.leaf_of:
            raise DetectorError(f"sample {ordinal} already in tree")
        self.arrivals.append(ordinal)
        if self.root is None:
            leaf = Leaf(point, ordinal)
            self.root = leaf
            self.leaf_of[ordinal] = leaf
            return leaf

        node = self.root
        while True:
            lo = np.minimum(node.lo, point)
            hi = np.maximum(node.hi, point)
            if not (hi - lo).any():
                # exact duplicate of a leaf point
                leaf = node if isinstance(node, Leaf) else self._descend(node, point)
                leaf.ordinals.append(ordinal)
                self.leaf_of[ordinal] = leaf
                self._update_up(leaf.parent)
                return leaf
            dim, cut = self._cut(lo, hi)
            if point[dim] <= cut < node.lo[dim]:
                return self._splice(node, point, ordinal, dim, cut, new_left=True)
            if node.hi[dim] <= cut < point[dim]:
                return self._splice(node, point, ordinal, dim, cut, new_left=False)
            if isinstance(node, Leaf):
                continue
            node = node.left if point[node.dim] <= node.cut else node.right

    def _descend(self, node, point: np.ndarray) -> Leaf:
        while isinstance(node, Branch):
            node = node.left if point[node.dim] <= node.cut else node.right
        return node

    def _splice(self, node, point, ordinal, dim, cut, new_left: bool) -> Leaf:
        parent = node.parent
        leaf = Leaf(point, ordinal)
        self.leaf_of[ordinal] = leaf
        branch = Branch(dim, cut, leaf, node) if new_left else Branch(dim, cut, node, leaf)
        branch.parent = parent
        if parent is None:
            self.root = branch
        elif parent.left is node:
            parent.left = branch
        else:
            parent.right = branch
        self._update_up(parent)
        return leaf

    def forget(self, ordinal: int):
        leaf = self.leaf_of.pop(ordinal)
        try:
            self.arrivals.remove(ordinal)
        except ValueError:
            pass
        leaf.ordinals.remove(ordinal)
        if leaf.ordinals:
            self._update_up(leaf.parent)
            return
        parent = leaf.parent
        if parent is None:
            self.root = None
            return
        sibling = parent.right if parent.left is leaf else parent.left
        grand = parent.parent
        sibling.parent = grand
        if grand is None:
            self.root = sibling
        elif grand.left is parent:
            grand.left = sibling
        else:
            grand.right = sibling
        self._update_up(grand)

    def forget_oldest(self) -> int:
        ordinal = self.arrivals[0]
        self.forget(ordinal)
        return ordinal

    def displacements(self, ordinal: int) -> list[float]:
        """Disp = sibling size / own size along the leaf -> root path (root excluded)."""
        node = self.leaf_of[ordinal]
        out = []
        while node.parent is not None:
            parent = node.parent
            sibling = parent.right if parent.left is node else parent.left
            out.append(sibling.n / node.n)
            node = parent
        return out

    def codisp(self, ordinal: int) -> float:
        disps = self.displacements(ordinal)
        return max(disps) if disps else 0.0

    def nodes(self) -> Iterator:
        stack = [self.root] if self.root is not None else []
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, Branch):
                stack.extend((node.left, node.right))

    def leaves(self) -> list[Leaf]:
        return [n for n in self.nodes() if isinstance(n, Leaf)]


def codisp_from_disps(per_tree: list[list[float]]) -> float:
    """(1/T) Σ_t max Disp; a tree with an empty path contributes 0."""
    if not per_tree:
        return 0.0
    return float(np.mean([max(d) if d else 0.0 for d in per_tree]))


class RRCF(StreamDetector):
    """
    Robust random cut forest over sliding windows.

    Each arriving sample is inserted into every tree and scored immediately by
    its CoDisp; trees drop their oldest samples once they hold more than f.
    """

    name = "rrcf"
    DETERMINISTIC = False

    def __init__(self, window: WindowSpec, seed: int = 0, n_trees: int = 25, max_samples: int = 256,
                 forget_threshold: Optional[int] = None):
        super().__init__(window, seed)
        if n_trees < 1 or max_samples < 1:
            raise DetectorError("rrcf: n_trees and max_samples must be at least 1")
        self.n_trees = int(n_trees)
        self.max_samples = int(max_samples)
        self.forget_threshold = int(forget_threshold) if forget_threshold else self.max_samples
        if self.forget_threshold < 1:
            raise DetectorError(f"forget_threshold must be at least 1, got {forget_threshold}")
        self.trees: list[RandomCutTree] = []
        self.scores: dict[int, float] = {}

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_trees": self.n_trees, "max_samples": self.max_samples, "forget_threshold": self.forget_threshold}

    def bootstrap_windows(self) -> int:
        return math.ceil(self.n_trees * self.max_samples / self.window.size)

    def _fit(self, samples: Batch) -> None:
        w, s = self.window.size, self.window.slide
        pool_size = min(len(samples), w + (self.bootstrap_windows() - 1) * s)
        take = min(self.max_samples, pool_size)
        self.trees = []
        for _ in range(self.n_trees):
            tree = RandomCutTree(self.rng)
            for i in np.sort(self.rng.choice(pool_size, size=take, replace=False)):
                tree.insert(samples.X[i], int(samples.ordinals[i]))
            self._trim(tree)
            self.trees.append(tree)
        logger.debug("rrcf: %d trees from %d of %d bootstrap samples", self.n_trees, take, pool_size)

    def _trim(self, tree: RandomCutTree):
        while len(tree) > self.forget_threshold:
            tree.forget_oldest()

    def insert(self, x: np.ndarray, ordinal: int) -> float:
        per_tree = []
        for tree in self.trees:
            if ordinal not in tree:
                tree.insert(x, ordinal)
            per_tree.append(tree.displacements(ordinal))
        score = codisp_from_disps(per_tree)
        for tree in self.trees:
            self._trim(tree)
        self.scores[ordinal] = score
        return score

    def _prime(self, window: Batch) -> None:
        for ordinal, x in zip(window.ordinals.tolist(), window.X):
            self.insert(x, ordinal)

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        for ordinal in expired.ordinals.tolist():
            self.scores.pop(ordinal, None)
        for ordinal, x in zip(arriving.ordinals.tolist(), arriving.X):
            self.insert(x, ordinal)
        return np.array([self.scores[o] for o in self.content.ordinals.tolist()])
