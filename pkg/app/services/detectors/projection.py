"""
Sparse random projection detectors: LODA and XSTREAM.

Both are density estimators over projected samples, so lower scores mean more
anomalous. The projection ensembles are shared with the batch variants in
`offline`.
"""

import bisect
import logging
import math
from enum import Enum
from typing import Any, Optional

import numpy as np

from app.core.errors import DetectorError
from app.core.stream import Batch, ScoreOrientation, WindowSpec, WindowType
from app.services.detectors.base import StreamDetector
from app.services.sketch import make_counter

logger = logging.getLogger(__name__)


class DensityRule(str, Enum):
    PRINTED = "printed"
    TRAPEZOID = "trapezoid"


class LodaMode(str, Enum):
    ALTERNATING = "alternating"
    CONTINUOUS = "continuous"


# ── LODA ─────────────────────────────────────────────────────────────────────

class OnlineHistogram:
    """
    Streaming histogram of at most `b` interior (z, m) bins.
    Overflow merges the two closest bins into their weighted mean. The min/max
    sentinels (z_min, 0) and (z_max, 0) bound the scorable range.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DetectorError(f"histogram capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self.z: list[float] = []
        self.m: list[int] = []
        self.z_min = math.inf
        self.z_max = -math.inf

    @property
    def total(self) -> int:
        return sum(self.m)

    def insert(self, value: float):
        value = float(value)
        self.z_min = min(self.z_min, value)
        self.z_max = max(self.z_max, value)
        i = bisect.bisect_left(self.z, value)
        if i < len(self.z) and self.z[i] == value:
            self.m[i] += 1
        else:
            self.z.insert(i, value)
            self.m.insert(i, 1)
        while len(self.z) > self.capacity:
            self._merge_closest()

    def _merge_closest(self):
        gaps = np.diff(self.z)
        i = int(np.argmin(gaps))
        m = self.m[i] + self.m[i + 1]
        z = (self.z[i] * self.m[i] + self.z[i + 1] * self.m[i + 1]) / m
        self.z[i: i + 2] = [z]
        self.m[i: i + 2] = [m]

    def pairs(self) -> list[tuple[float, int]]:
        """Bins with the sentinels, strictly increasing in z."""
        out = [(self.z_min, 0)] if self.z and self.z_min < self.z[0] else []
        out += list(zip(self.z, self.m))
        if self.z and self.z_max > self.z[-1]:
            out.append((self.z_max, 0))
        return out

    def density(self, value: float, rule: DensityRule = DensityRule.TRAPEZOID) -> Optional[float]:
        """Density at `value`, or None when no bracketing pair exists."""
        pairs = self.pairs()
        if len(pairs) < 2:
            return None
        zs = [p[0] for p in pairs]
        if value < zs[0] or value > zs[-1]:
            return None
        i = min(bisect.bisect_right(zs, value) - 1, len(zs) - 2)
        (z0, m0), (z1, m1) = pairs[i], pairs[i + 1]
        width = z1 - z0
        if width <= 0:
            return None
        M = self.total
        if rule == DensityRule.PRINTED:
            return (z0 * m0 + z1 * m1) / (2 * M * width)
        return (m0 + m1) / (2 * M * width)


def loda_projections(d: int, k: int, rng: np.random.Generator, sparsity: str = "zeroed") -> np.ndarray:
    """
    k Gaussian projection vectors. `zeroed` sets √d coefficients to zero;
    `original` keeps only √d non-zero. At least one coefficient survives.
    """
    if sparsity not in ("zeroed", "original"):
        raise DetectorError(f"unknown LODA sparsity convention '{sparsity}'")
    W = rng.standard_normal((k, d))
    root = int(round(math.sqrt(d)))
    n_zero = min(d - 1, root) if sparsity == "zeroed" else d - max(1, min(d, root))
    for row in W:
        row[rng.choice(d, size=n_zero, replace=False)] = 0.0
    return W


class LodaEnsemble:
    def __init__(self, projections: np.ndarray, n_bins: int, rule: DensityRule = DensityRule.TRAPEZOID):
        self.projections = np.asarray(projections, dtype=float)
        self.rule = DensityRule(rule)
        self.histograms = [OnlineHistogram(n_bins) for _ in range(self.projections.shape[0])]

    def project(self, X: np.ndarray) -> np.ndarray:
        return X @ self.projections.T

    def insert(self, X: np.ndarray):
        Z = self.project(X)
        for j, hist in enumerate(self.histograms):
            for value in Z[:, j]:
                hist.insert(value)

    def score(self, X: np.ndarray) -> np.ndarray:
        """Mean density over histograms that bracket the sample; 0 when none does."""
        Z = self.project(X)
        out = np.zeros(X.shape[0])
        for i in range(X.shape[0]):
            dens = [h.density(Z[i, j], self.rule) for j, h in enumerate(self.histograms)]
            dens = [v for v in dens if v is not None]
            out[i] = float(np.mean(dens)) if dens else 0.0
        return out


class LODA(StreamDetector):
    name = "loda"
    ORIENTATION = ScoreOrientation.LOWER_IS_ANOMALOUS
    WINDOW_TYPE = WindowType.TUMBLING
    DETERMINISTIC = False

    def __init__(
        self,
        window: WindowSpec,
        seed: int = 0,
        n_projections: int = 50,
        n_bins: int = 20,
        mode: str = LodaMode.ALTERNATING,
        density_rule: str = DensityRule.TRAPEZOID,
        sparsity: str = "zeroed",
    ):
        super().__init__(window, seed)
        if n_projections < 1 or n_bins < 2:
            raise DetectorError("loda: n_projections must be >= 1 and n_bins >= 2")
        self.n_projections = int(n_projections)
        self.n_bins = int(n_bins)
        self.mode = LodaMode(mode)
        self.density_rule = DensityRule(density_rule)
        self.sparsity = sparsity
        self.ensemble: Optional[LodaEnsemble] = None

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_projections": self.n_projections, "n_bins": self.n_bins, "mode": self.mode.value}

    def _fit(self, samples: Batch) -> None:
        W = loda_projections(samples.d, self.n_projections, self.rng, self.sparsity)
        self.ensemble = LodaEnsemble(W, self.n_bins, self.density_rule)
        self.ensemble.insert(samples.X)

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        if self.mode == LodaMode.CONTINUOUS:
            scores = np.empty(len(arriving))
            for i in range(len(arriving)):
                row = arriving.X[i: i + 1]
                scores[i] = self.ensemble.score(row)[0]
                self.ensemble.insert(row)
            return scores
        scores = self.ensemble.score(arriving.X)
        self.ensemble.insert(arriving.X)
        return scores

    def masses(self) -> list[int]:
        return [h.total for h in self.ensemble.histograms]


# ── XSTREAM ──────────────────────────────────────────────────────────────────

def sparse_projections(d: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """d x K matrix; each column has ceil(d/3) entries of ±sqrt(3/K)."""
    R = np.zeros((d, K))
    nnz = math.ceil(d / 3)
    weight = math.sqrt(3.0 / K)
    for j in range(K):
        rows = rng.choice(d, size=nnz, replace=False)
        R[rows, j] = rng.choice([-weight, weight], size=nnz)
    return R


class HalfSpaceChains:
    """
    M chains of depth D over K projected features.

    At level l a chain selects one projected feature F. On its first selection
    the bin coordinate becomes (p_F + s_F)/Δ_F; every later selection halves
    the bin width via z_F ← 2·z_F − s_F/Δ_F. Coordinates never selected stay 0.
    """

    def __init__(self, projection: np.ndarray, deltas: np.ndarray, shifts: np.ndarray, selections: np.ndarray):
        self.projection = np.asarray(projection, dtype=float)
        self.deltas = np.asarray(deltas, dtype=float)
        self.shifts = np.asarray(shifts, dtype=float)
        self.selections = np.asarray(selections, dtype=int)
        M, D = self.selections.shape
        if self.shifts.shape != (M, self.deltas.shape[0]):
            raise DetectorError("shifts must be one row per chain over the projected features")
        self.n_chains, self.depth = M, D

    @classmethod
    def build(cls, X: np.ndarray, K: int, M: int, D: int, rng: np.random.Generator) -> "HalfSpaceChains":
        R = sparse_projections(X.shape[1], K, rng)
        Y = X @ R
        deltas = (Y.max(axis=0) - Y.min(axis=0)) / 2
        usable = np.flatnonzero(deltas > 0)
        if len(usable) == 0:
            logger.warning("xstream: every projected feature is constant, using unit bin widths")
            deltas = np.ones(K)
            usable = np.arange(K)
        shifts = rng.uniform(0, 1, size=(M, K)) * deltas
        selections = rng.choice(usable, size=(M, D), replace=True)
        return cls(R, deltas, shifts, selections)

    def project(self, X: np.ndarray) -> np.ndarray:
        return X @ self.projection

    def bin_vectors(self, Y: np.ndarray, chain: int) -> np.ndarray:
        """Floored bin vectors, shape (n, D, K)."""
        n, K = Y.shape
        z = np.zeros((n, K))
        seen = np.zeros(K, dtype=int)
        out = np.zeros((n, self.depth, K), dtype=np.int64)
        s, delta = self.shifts[chain], self.deltas
        for level, f in enumerate(self.selections[chain]):
            if seen[f] == 0:
                z[:, f] = (Y[:, f] + s[f]) / delta[f]
            else:
                z[:, f] = 2 * z[:, f] - s[f] / delta[f]
            seen[f] += 1
            out[:, level, :] = np.floor(z)
        return out


def chain_score(counts_per_level) -> float:
    """min over levels l = 1..D of 2^l · count_l."""
    return float(min((2 ** (level + 1)) * c for level, c in enumerate(counts_per_level)))


class XStreamModel:
    """Chains plus one counter per chain (levels share it through the salt)."""

    def __init__(self, chains: HalfSpaceChains, exact: bool = False, cms_depth: int = None,
                 cms_width: int = None, seed: int = 0):
        self.chains = chains
        self.exact = exact
        self._counter_args = (cms_depth, cms_width, seed)
        self.counters = [self._new_counter(c) for c in range(chains.n_chains)]

    def _new_counter(self, chain: int):
        depth, width, seed = self._counter_args
        return make_counter(self.exact, depth, width, seed + chain)

    def fresh_counters(self) -> list:
        return [self._new_counter(c) for c in range(self.chains.n_chains)]

    def count(self, X: np.ndarray, counters: list):
        Y = self.chains.project(X)
        for c, counter in enumerate(counters):
            bins = self.chains.bin_vectors(Y, c)
            for row in bins:
                for level in range(self.chains.depth):
                    counter.add(row[level], 1, salt=level)

    def score(self, X: np.ndarray, counters: list) -> np.ndarray:
        Y = self.chains.project(X)
        out = np.zeros(X.shape[0])
        for c, counter in enumerate(counters):
            bins = self.chains.bin_vectors(Y, c)
            for i, row in enumerate(bins):
                out[i] += chain_score([counter.estimate(row[level], salt=level) for level in range(self.chains.depth)])
        return out / len(counters)


class XSTREAM(StreamDetector):
    """
    Half-space chains over tumbling windows with count-min sketched bins.
    A window is scored against the reference counts while being counted into
    the current ones; at the end of the window the current counts replace the
    reference and start over from zero.
    """

    name = "xstream"
    ORIENTATION = ScoreOrientation.LOWER_IS_ANOMALOUS
    WINDOW_TYPE = WindowType.TUMBLING
    DETERMINISTIC = False

    def __init__(self, window: WindowSpec, seed: int = 0, n_projections: int = 50, n_chains: int = 50,
                 depth: int = 10, exact: bool = False):
        super().__init__(window, seed)
        if min(n_projections, n_chains, depth) < 1:
            raise DetectorError("xstream: n_projections, n_chains and depth must be at least 1")
        self.n_projections = int(n_projections)
        self.n_chains = int(n_chains)
        self.depth = int(depth)
        self.exact = exact
        self.model: Optional[XStreamModel] = None
        self.reference: list = []
        self.current: list = []

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"n_projections": self.n_projections, "n_chains": self.n_chains, "depth": self.depth}

    def _fit(self, samples: Batch) -> None:
        chains = HalfSpaceChains.build(samples.X, self.n_projections, self.n_chains, self.depth, self.rng)
        self.model = XStreamModel(chains, exact=self.exact, seed=self.seed)
        self.reference = self.model.fresh_counters()
        self.model.count(samples.X, self.reference)
        self.current = self.model.fresh_counters()

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        scores = self.model.score(arriving.X, self.reference)
        self.model.count(arriving.X, self.current)
        self.reference, self.current = self.current, self.reference
        for counter in self.current:
            counter.clear()
        return scores

    def reference_totals(self) -> list[int]:
        """Samples counted per chain in the reference counts."""
        return [counter.total // self.depth for counter in self.reference]
