"""
Stream primitives shared by every detector and by the harness.

Samples are ordered by their ordinal (arrival position); there is no notion of
wall-clock time anywhere in the library. A stream is held column-wise in a
`Batch` (ordinals, feature matrix, optional labels) and cut into windows by
`window_iterator`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from app.core.errors import StreamError

logger = logging.getLogger(__name__)


class ScoreOrientation(str, Enum):
    HIGHER_IS_ANOMALOUS = "higher_is_anomalous"
    LOWER_IS_ANOMALOUS = "lower_is_anomalous"


class WindowType(str, Enum):
    SLIDING = "sliding"
    TUMBLING = "tumbling"


@dataclass(frozen=True, slots=True)
class Sample:
    ordinal: int
    features: np.ndarray
    label: Optional[bool] = None


@dataclass(frozen=True, slots=True)
class WindowSpec:
    size: int
    slide: int

    def __post_init__(self):
        if self.size < 1 or self.slide < 1:
            raise StreamError(f"window size and slide must be positive, got w={self.size}, s={self.slide}")
        if self.slide > self.size:
            raise StreamError(f"window slide {self.slide} exceeds window size {self.size}")

    @property
    def is_tumbling(self) -> bool:
        return self.slide == self.size

    def tumbling(self) -> "WindowSpec":
        return WindowSpec(self.size, self.size)


@dataclass(frozen=True)
class Batch:
    """Column-wise block of samples. `X` is (n, d), `ordinals` and `labels` are (n,)."""

    ordinals: np.ndarray
    X: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.X.ndim != 2:
            raise StreamError(f"feature matrix must be 2-d, got shape {self.X.shape}")
        if self.ordinals.shape != (self.X.shape[0],):
            raise StreamError("ordinals and feature rows differ in length")
        if self.labels is not None and self.labels.shape != self.ordinals.shape:
            raise StreamError("labels and feature rows differ in length")

    @classmethod
    def from_arrays(cls, X, labels=None, start: int = 0) -> "Batch":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = None if labels is None else np.asarray(labels, dtype=bool)
        return cls(np.arange(start, start + X.shape[0]), X, y)

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "Batch":
        if not samples:
            raise StreamError("cannot build a batch from zero samples")
        X = np.vstack([np.asarray(s.features, dtype=float) for s in samples])
        ordinals = np.array([s.ordinal for s in samples], dtype=int)
        if any(s.label is None for s in samples):
            labels = None
        else:
            labels = np.array([bool(s.label) for s in samples])
        return cls(ordinals, X, labels)

    @classmethod
    def empty(cls, d: int) -> "Batch":
        return cls(np.zeros(0, dtype=int), np.zeros((0, d)), np.zeros(0, dtype=bool))

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def samples(self) -> Iterator[Sample]:
        for i in range(len(self)):
            label = None if self.labels is None else bool(self.labels[i])
            yield Sample(int(self.ordinals[i]), self.X[i], label)

    def take(self, index) -> "Batch":
        labels = None if self.labels is None else self.labels[index]
        return Batch(self.ordinals[index], self.X[index], labels)

    def concat(self, other: "Batch") -> "Batch":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        labels = None
        if self.labels is not None and other.labels is not None:
            labels = np.concatenate([self.labels, other.labels])
        return Batch(
            np.concatenate([self.ordinals, other.ordinals]),
            np.vstack([self.X, other.X]),
            labels,
        )

    def slide(self, arriving: "Batch", expired: "Batch") -> "Batch":
        """Drop `expired` (must be the oldest samples held) and append `arriving`."""
        k = len(expired)
        if k > len(self) or not np.array_equal(self.ordinals[:k], expired.ordinals):
            raise StreamError("expired samples are not the oldest samples of the window")
        return self.take(slice(k, None)).concat(arriving)


@dataclass(frozen=True)
class Window:
    index: int
    start: int
    stop: int
    arrive_start: int
    expire_start: int
    partial: bool = False

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def contents(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def arriving(self) -> slice:
        return slice(self.arrive_start, self.stop)

    @property
    def expired(self) -> slice:
        return slice(self.expire_start, self.start)


def window_iterator(n: int, spec: WindowSpec) -> list[Window]:
    """
    Cut positions [0, n) into windows of `spec`.
    The first window covers [0, w); each following one advances by s. A trailing
    window shorter than w is emitted with `partial=True`; a stream shorter than w
    yields one partial window.
    """
    if n < 1:
        raise StreamError("cannot window an empty stream")
    w, s = spec.size, spec.slide
    if n <= w:
        return [Window(0, 0, n, 0, 0, partial=n < w)]

    count = math.ceil((n - w) / s) + 1
    windows = []
    prev_start, prev_stop = 0, 0
    for i in range(count):
        start = i * s
        stop = min(start + w, n)
        arrive_start = 0 if i == 0 else prev_stop
        expire_start = start if i == 0 else prev_start
        windows.append(Window(i, start, stop, arrive_start, expire_start, partial=(stop - start) < w))
        prev_start, prev_stop = start, stop
    return windows


@dataclass
class StreamPartition:
    train: range
    val: range
    test: range

    def __post_init__(self):
        if not (self.train.stop == self.val.start and self.val.stop == self.test.start):
            raise StreamError("partition ranges must be contiguous train -> val -> test")
        if min(len(self.train), len(self.val), len(self.test)) < 1:
            raise StreamError("every partition needs at least one window")

    @property
    def n_windows(self) -> int:
        return self.test.stop


@dataclass
class WindowedStream:
    """A batch cut into windows. Window reads go through `window()` so they can be audited."""

    batch: Batch
    spec: WindowSpec
    windows: list[Window] = field(default_factory=list)
    partition: Optional[StreamPartition] = None
    name: str = "stream"
    lacks_anomalies: bool = False
    reads: Optional[list[int]] = None

    def __post_init__(self):
        if not self.windows:
            self.windows = window_iterator(len(self.batch), self.spec)

    def __len__(self) -> int:
        return len(self.windows)

    def audit(self) -> list[int]:
        self.reads = []
        return self.reads

    def window(self, i: int) -> tuple[Batch, Batch, Batch]:
        """(contents, arriving, expired) of window `i`."""
        if self.reads is not None:
            self.reads.append(i)
        win = self.windows[i]
        return (
            self.batch.take(win.contents),
            self.batch.take(win.arriving),
            self.batch.take(win.expired),
        )

    def span(self, windows: range) -> Batch:
        """Every sample covered by a contiguous window range."""
        if self.reads is not None:
            self.reads.extend(windows)
        first, last = self.windows[windows.start], self.windows[windows.stop - 1]
        return self.batch.take(slice(first.start, last.stop))

    def rewindow(self, spec: WindowSpec) -> "WindowedStream":
        return WindowedStream(self.batch, spec, name=self.name, lacks_anomalies=self.lacks_anomalies)


def normalize_scores(scores, orientation: ScoreOrientation) -> np.ndarray:
    """Map scores to higher-is-anomalous. Rank order of anomalousness is preserved."""
    scores = np.asarray(scores, dtype=float)
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    if orientation == ScoreOrientation.LOWER_IS_ANOMALOUS:
        return -scores
    return scores.copy()
