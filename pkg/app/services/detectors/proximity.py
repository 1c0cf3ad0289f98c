"""
Distance-threshold detectors: MCOD, CPOD and LEAP.

All three share the same outlier definition: a sample is anomalous when fewer
than K other samples of the current window lie strictly closer than R. They
differ in how they avoid range queries.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist

from app.core.errors import DetectorError
from app.core.stream import Batch, WindowSpec
from app.services.detectors.base import StreamDetector

logger = logging.getLogger(__name__)

CPOD_EPSILON = 1e-9


def _check_params(max_distance: float, min_neighbors: int):
    if max_distance <= 0:
        raise DetectorError(f"max_distance must be positive, got {max_distance}")
    if min_neighbors < 1:
        raise DetectorError(f"min_neighbors must be at least 1, got {min_neighbors}")


def _inverse_count(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(counts > 0, 1.0 / np.maximum(counts, 1), np.inf)


# ── MCOD ─────────────────────────────────────────────────────────────────────

@dataclass
class MicroCluster:
    center: np.ndarray
    center_ordinal: int
    members: set[int] = field(default_factory=set)


class MCOD(StreamDetector):
    """
    Micro-cluster based outlier detection.

    Samples within R/2 of a micro-cluster center join it; a cluster certifies
    its K+1 or more members as normal. Everything else waits in the PD list
    where a new cluster forms as soon as some PD sample has K PD neighbors
    within R/2. Scores are dist(p, nearest center) / R-neighbors(p).
    """

    name = "mcod"

    def __init__(self, window: WindowSpec, seed: int = 0, max_distance: float = 1.0, min_neighbors: int = 5):
        super().__init__(window, seed)
        _check_params(max_distance, min_neighbors)
        self.R = float(max_distance)
        self.K = int(min_neighbors)
        self.points: dict[int, np.ndarray] = {}
        self.clusters: dict[int, MicroCluster] = {}
        self.cluster_of: dict[int, int] = {}
        self.pd: dict[int, None] = {}
        self._next_cluster = 0

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"max_distance": self.R, "min_neighbors": self.K}

    @property
    def micro_clusters(self) -> list[MicroCluster]:
        return list(self.clusters.values())

    def _prime(self, window: Batch) -> None:
        self._insert(window)

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        self._expire(expired)
        self._insert(arriving)
        return self.score_window()

    # ── structure maintenance ──

    def _nearest_cluster(self, x: np.ndarray) -> tuple[int | None, float]:
        if not self.clusters:
            return None, math.inf
        ids = list(self.clusters)
        centers = np.vstack([self.clusters[i].center for i in ids])
        d = np.linalg.norm(centers - x, axis=1)
        j = int(np.argmin(d))
        return ids[j], float(d[j])

    def _place(self, ordinal: int):
        x = self.points[ordinal]
        cid, d = self._nearest_cluster(x)
        if cid is not None and d <= self.R / 2:
            self.clusters[cid].members.add(ordinal)
            self.cluster_of[ordinal] = cid
            return
        self.pd[ordinal] = None
        self._try_form(ordinal)

    def _try_form(self, ordinal: int):
        pd_ords = np.fromiter(self.pd, dtype=int)
        pd_X = np.vstack([self.points[o] for o in pd_ords])
        half = self.R / 2
        near = cdist(self.points[ordinal][None, :], pd_X)[0] <= half
        candidates = sorted(set(pd_ords[near].tolist()) | {ordinal})

        best, best_n, best_mask = None, -1, None
        for c in candidates:
            mask = cdist(self.points[c][None, :], pd_X)[0] <= half
            n = int(mask.sum()) - 1
            if n >= self.K and n > best_n:
                best, best_n, best_mask = c, n, mask
        if best is None:
            return

        cid = self._next_cluster
        self._next_cluster += 1
        members = set(pd_ords[best_mask].tolist())
        self.clusters[cid] = MicroCluster(self.points[best].copy(), best, members)
        for m in members:
            del self.pd[m]
            self.cluster_of[m] = cid
        logger.debug("mcod: cluster %d formed at sample %d with %d members", cid, best, len(members))

    def _insert(self, batch: Batch):
        for ordinal, x in zip(batch.ordinals.tolist(), batch.X):
            self.points[ordinal] = x
            self._place(ordinal)

    def _expire(self, batch: Batch):
        released: list[int] = []
        for ordinal in batch.ordinals.tolist():
            self.points.pop(ordinal, None)
            cid = self.cluster_of.pop(ordinal, None)
            if cid is None:
                self.pd.pop(ordinal, None)
                continue
            mc = self.clusters[cid]
            mc.members.discard(ordinal)
            if len(mc.members) < self.K + 1:
                for m in mc.members:
                    del self.cluster_of[m]
                released.extend(mc.members)
                del self.clusters[cid]
        for ordinal in sorted(o for o in released if o in self.points):
            self._place(ordinal)

    # ── scoring ──

    def candidates(self, ordinal: int) -> list[int]:
        """
        Samples that can lie within R of `ordinal`: the PD list plus members of
        every micro-cluster whose center is within 3R/2. A neighbor in a cluster
        is at most R/2 from its center, so farther clusters cannot hold one.
        """
        out = [o for o in self.pd if o != ordinal]
        if self.clusters:
            ids = list(self.clusters)
            centers = np.vstack([self.clusters[i].center for i in ids])
            d = np.linalg.norm(centers - self.points[ordinal], axis=1)
            for cid, dist in zip(ids, d.tolist()):
                if dist <= 1.5 * self.R:
                    out.extend(m for m in self.clusters[cid].members if m != ordinal)
        return out

    def neighbor_count(self, ordinal: int) -> int:
        others = self.candidates(ordinal)
        if not others:
            return 0
        X = np.vstack([self.points[o] for o in others])
        return int((np.linalg.norm(X - self.points[ordinal], axis=1) < self.R).sum())

    def neighbor_counts(self) -> np.ndarray:
        return np.array([self.neighbor_count(o) for o in self.content.ordinals.tolist()], dtype=int)

    def labels(self) -> np.ndarray:
        """True where the sample has fewer than K neighbors within R. Cluster members are normal."""
        return np.array([
            o not in self.cluster_of and self.neighbor_count(o) < self.K
            for o in self.content.ordinals.tolist()
        ], dtype=bool)

    def score_window(self) -> np.ndarray:
        counts = self.neighbor_counts()
        if self.clusters:
            centers = np.vstack([mc.center for mc in self.clusters.values()])
            center_dist = cdist(self.content.X, centers).min(axis=1)
        else:
            center_dist = np.full(len(counts), self.R)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(counts > 0, center_dist / np.maximum(counts, 1), np.inf)


# ── CPOD ─────────────────────────────────────────────────────────────────────

N_BANDS = 4


def probe_case(d0: float, radius: float) -> int:
    """Which of the four distance cases holds for distance d0 to the closest core."""
    if d0 <= radius / 2:
        return 1
    if d0 <= radius:
        return 2
    if d0 <= 2 * radius:
        return 3
    return 4


def band_of(d: float, radius: float) -> int:
    """Band k holds distances in (kR/2, (k+1)R/2]; distance 0 falls in band 0."""
    if d <= radius / 2:
        return 0
    return min(N_BANDS - 1, math.ceil(d / (radius / 2)) - 1)


@dataclass
class CorePoint:
    location: np.ndarray
    bands: list[set[int]] = field(default_factory=lambda: [set() for _ in range(N_BANDS)])

    def members(self) -> set[int]:
        return set().union(*self.bands)


class CPOD(StreamDetector):
    """
    Core-point based outlier detection with minimal probing.

    Every window sample within 2R of a core is filed in one of that core's four
    distance bands, and cores stay more than R apart. Neighbor search walks the
    closest core's bands in order of proximity and stops once K neighbors are
    confirmed.

    With search="limited" a sample farther than R from every core only looks
    at samples within R of some core, and one farther than 2R looks nowhere.
    That reproduces the published behavior for hand-placed cores but is not
    exact; the default "exhaustive" falls back to every sample instead.
    """

    name = "cpod"
    SEARCH_MODES = ("exhaustive", "limited")

    def __init__(
        self,
        window: WindowSpec,
        seed: int = 0,
        max_distance: float = 1.0,
        min_neighbors: int = 5,
        search: str = "exhaustive",
    ):
        super().__init__(window, seed)
        _check_params(max_distance, min_neighbors)
        if search not in self.SEARCH_MODES:
            raise DetectorError(f"search must be one of {self.SEARCH_MODES}, got {search!r}")
        self.R = float(max_distance)
        self.K = int(min_neighbors)
        self.search = search
        self.points: dict[int, np.ndarray] = {}
        self.cores: list[CorePoint] = []
        self.unindexed: set[int] = set()
        self.neighbors: dict[int, set[int]] = {}

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"max_distance": self.R, "min_neighbors": self.K, "search": self.search}

    def _prime(self, window: Batch) -> None:
        self._update(window, Batch.empty(window.d))

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        self._update(arriving, expired)
        return self.score_window()

    def _update(self, arriving: Batch, expired: Batch):
        gone = set(expired.ordinals.tolist())
        for ordinal in gone:
            self.points.pop(ordinal, None)
            self.neighbors.pop(ordinal, None)
            self.unindexed.discard(ordinal)
            for core in self.cores:
                for band in core.bands:
                    band.discard(ordinal)
        self.cores = [c for c in self.cores if c.members()]

        new = arriving.ordinals.tolist()
        for ordinal, x in zip(new, arriving.X):
            self.points[ordinal] = x
            self._index(ordinal)

        stale = []
        for ordinal, found in self.neighbors.items():
            found -= gone
            if len(found) < self.K:
                stale.append(ordinal)
        for ordinal in stale + new:
            self.neighbors[ordinal] = self._probe(ordinal)

    def _index(self, ordinal: int):
        x = self.points[ordinal]
        nearest = math.inf
        for core in self.cores:
            d = float(np.linalg.norm(core.location - x))
            nearest = min(nearest, d)
            if d <= 2 * self.R:
                core.bands[band_of(d, self.R)].add(ordinal)
        if nearest > self.R:
            self._add_core(x)

    def _add_core(self, location: np.ndarray):
        core = CorePoint(np.array(location, dtype=float))
        if self.points:
            ords = list(self.points)
            d = np.linalg.norm(np.vstack([self.points[o] for o in ords]) - core.location, axis=1)
            for o, dist in zip(ords, d.tolist()):
                if dist <= 2 * self.R:
                    core.bands[band_of(dist, self.R)].add(o)
                    self.unindexed.discard(o)
        self.cores.append(core)

    def use_cores(self, locations: np.ndarray):
        """Replace the core points with the given locations, refile the window and recount every sample."""
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        if self.content is None:
            raise DetectorError("cpod: train before placing cores")
        if locations.shape[1] != self.content.d:
            raise DetectorError(f"core locations must have {self.content.d} columns, got {locations.shape[1]}")
        self.cores = []
        self.unindexed = set(self.points)
        for loc in locations:
            self._add_core(loc)
        for ordinal in self.points:
            self.neighbors[ordinal] = self._probe(ordinal)
        logger.debug("cpod: %d cores placed, %d samples unindexed", len(self.cores), len(self.unindexed))

    def closest_core(self, x: np.ndarray) -> tuple[int, float]:
        d = np.array([np.linalg.norm(c.location - x) for c in self.cores])
        j = int(np.argmin(d))
        return j, float(d[j])

    def _candidate_groups(self, x: np.ndarray) -> list[set[int]]:
        if not self.cores:
            return [set(self.points)]
        j, d0 = self.closest_core(x)
        case = probe_case(d0, self.R)
        if case <= 2:
            core = self.cores[j]
            half = self.R / 2
            ks = [k for k in range(N_BANDS) if (k + 1) * half > d0 - self.R and k * half < d0 + self.R]
            ks.sort(key=lambda k: (abs((k + 0.5) * half - d0), k))
            return [core.bands[k] for k in ks]
        order = np.argsort([np.linalg.norm(c.location - x) for c in self.cores], kind="stable")
        if self.search == "limited":
            if case == 4:
                return []
            return [self.cores[i].bands[0] | self.cores[i].bands[1] for i in order]
        return [self.cores[i].members() for i in order] + [self.unindexed]

    def _probe(self, ordinal: int) -> set[int]:
        x = self.points[ordinal]
        found: set[int] = set()
        seen = {ordinal}
        for group in self._candidate_groups(x):
            fresh = sorted(group - seen)
            if not fresh:
                continue
            seen.update(fresh)
            d = np.linalg.norm(np.vstack([self.points[o] for o in fresh]) - x, axis=1)
            found.update(o for o, dist in zip(fresh, d.tolist()) if dist < self.R)
            if len(found) >= self.K:
                break
        return found

    def neighbor_counts(self) -> np.ndarray:
        return np.array([len(self.neighbors[o]) for o in self.content.ordinals.tolist()])

    def labels(self) -> np.ndarray:
        return self.neighbor_counts() < self.K

    def score_window(self) -> np.ndarray:
        return 1.0 / (self.neighbor_counts() + CPOD_EPSILON)


# ── LEAP ─────────────────────────────────────────────────────────────────────

class LEAP(StreamDetector):
    """
    Slide-indexed outlier detection with minimal probing.

    Each sample keeps an evidence list of neighbors grouped by slide and probed
    newest slide first, stopping at K. When a slide expires only the samples
    whose evidence referenced it are re-probed.
    """

    name = "leap"

    def __init__(self, window: WindowSpec, seed: int = 0, max_distance: float = 1.0, min_neighbors: int = 5):
        super().__init__(window, seed)
        _check_params(max_distance, min_neighbors)
        self.R = float(max_distance)
        self.K = int(min_neighbors)
        self.slides: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.points: dict[int, np.ndarray] = {}
        self.evi: dict[int, dict[int, list[int]]] = {}
        self.trigger_list: set[int] = set()

    @property
    def hyper_params(self) -> dict[str, Any]:
        return {"max_distance": self.R, "min_neighbors": self.K}

    def slide_of(self, ordinal: int) -> int:
        return ordinal // self.window.slide

    def _prime(self, window: Batch) -> None:
        self._update(window, Batch.empty(window.d))

    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        self._update(arriving, expired)
        return self.score_window()

    def evidence(self, ordinal: int) -> list[int]:
        """Evidence list flattened newest slide first, ascending ordinal within a slide."""
        groups = self.evi.get(ordinal, {})
        return [o for sid in sorted(groups, reverse=True) for o in sorted(groups[sid])]

    def _count(self, ordinal: int) -> int:
        return sum(len(v) for v in self.evi[ordinal].values())

    def _update(self, arriving: Batch, expired: Batch):
        gone = set(expired.ordinals.tolist())
        short = {o for o in self.evi if o not in gone and self._count(o) < self.K}
        triggered = self.trigger_list - gone
        for ordinal in gone:
            self.points.pop(ordinal, None)
            self.evi.pop(ordinal, None)
        for sid in list(self.slides):
            ords, X = self.slides[sid]
            keep = ~np.isin(ords, list(gone))
            if not keep.any():
                del self.slides[sid]
            elif not keep.all():
                self.slides[sid] = (ords[keep], X[keep])
        lost: set[int] = set()
        if gone:
            for ordinal, groups in self.evi.items():
                for sid in list(groups):
                    kept = [o for o in groups[sid] if o not in gone]
                    if len(kept) < len(groups[sid]):
                        lost.add(ordinal)
                    if kept:
                        groups[sid] = kept
                    else:
                        del groups[sid]
        missed = lost - triggered - short
        if missed:
            logger.debug("leap: %d samples lost evidence outside the trigger list", len(missed))

        new = arriving.ordinals.tolist()
        for ordinal, x in zip(new, arriving.X):
            self.points[ordinal] = x
            sid = self.slide_of(ordinal)
            if sid in self.slides:
                ords, X = self.slides[sid]
                self.slides[sid] = (np.append(ords, ordinal), np.vstack([X, x]))
            else:
                self.slides[sid] = (np.array([ordinal]), x[None, :].copy())

        for ordinal in new:
            self.evi[ordinal] = {}
            self._probe(ordinal)
        # samples already short scanned every older slide, only the arriving ones can add evidence
        arriving_sids = {self.slide_of(o) for o in new}
        for ordinal in sorted((triggered | lost) - short):
            self._probe(ordinal)
        for ordinal in sorted(short):
            self._probe(ordinal, arriving_sids)

        self._refresh_triggers()

    def _probe(self, ordinal: int, sids: set[int] | None = None):
        x = self.points[ordinal]
        groups = self.evi[ordinal]
        known = {o for v in groups.values() for o in v}
        total = len(known)
        if total >= self.K:
            return
        for sid in sorted(self.slides if sids is None else sids & self.slides.keys(), reverse=True):
            ords, X = self.slides[sid]
            d = np.linalg.norm(X - x, axis=1)
            for o, dist in sorted(zip(ords.tolist(), d.tolist())):
                if o == ordinal or o in known or dist >= self.R:
                    continue
                groups.setdefault(sid, []).append(o)
                total += 1
                if total >= self.K:
                    return

    def _refresh_triggers(self):
        if not self.slides:
            self.trigger_list = set()
            return
        head = self.content.ordinals[0] if self.content is not None and len(self.content) else min(self.points)
        expiring = set(range(head, head + self.window.slide))
        self.trigger_list = {
            o for o, groups in self.evi.items()
            if o not in expiring and any(n in expiring for v in groups.values() for n in v)
        }

    def neighbor_counts(self) -> np.ndarray:
        return np.array([self._count(o) for o in self.content.ordinals.tolist()])

    def labels(self) -> np.ndarray:
        return self.neighbor_counts() < self.K

    def score_window(self) -> np.ndarray:
        return _inverse_count(self.neighbor_counts())
