"""
Count-min sketch over integer bin keys.

Each key (a tuple of ints, e.g. a discretized bin vector) is serialized to
bytes and hashed with murmur3; one 128-bit digest yields four 32-bit row
hashes, further rows use further seeds. Estimates take the row minimum, so
they never undercount.
"""

from collections import Counter
from typing import Iterable, Sequence, Union

import mmh3
import numpy as np

from app.core.config import settings

Key = Union[int, Sequence[int], np.ndarray]

_MASK32 = 0xFFFFFFFF


def key_bytes(key: Key, salt: int = 0) -> bytes:
    arr = np.atleast_1d(np.asarray(key, dtype=np.int64))
    return np.int64(salt).tobytes() + arr.tobytes()


class CountMinSketch:
    def __init__(self, depth: int = None, width: int = None, seed: int = 0):
        self.depth = depth or settings.cms_depth
        self.width = width or settings.cms_width
        if self.depth < 1 or self.width < 1:
            raise ValueError(f"count-min sketch needs positive depth and width, got {self.depth}x{self.width}")
        self.seed = seed
        self.table = np.zeros((self.depth, self.width), dtype=np.int32)
        self.total = 0
        self._rows = np.arange(self.depth)

    def columns(self, key: Key, salt: int = 0) -> np.ndarray:
        data = key_bytes(key, salt)
        cols = []
        block = 0
        while len(cols) < self.depth:
            digest = mmh3.hash128(data, seed=(self.seed * 7919 + block) & _MASK32, signed=False)
            for part in range(4):
                cols.append(((digest >> (32 * part)) & _MASK32) % self.width)
            block += 1
        return np.array(cols[: self.depth])

    def add(self, key: Key, count: int = 1, salt: int = 0):
        self.table[self._rows, self.columns(key, salt)] += count
        self.total += count

    def estimate(self, key: Key, salt: int = 0) -> int:
        return int(self.table[self._rows, self.columns(key, salt)].min())

    def clear(self):
        self.table[:] = 0
        self.total = 0

    def copy(self) -> "CountMinSketch":
        other = CountMinSketch(self.depth, self.width, self.seed)
        other.table = self.table.copy()
        other.total = self.total
        return other

    def __repr__(self):
        return f"CountMinSketch(depth={self.depth}, width={self.width}, total={self.total})"


class ExactCounter:
    """Hash-map counter with the sketch interface, for exact counting."""

    def __init__(self, *_, **__):
        self.counts: Counter = Counter()
        self.total = 0

    def add(self, key: Key, count: int = 1, salt: int = 0):
        k = key_bytes(key, salt)
        self.counts[k] += count
        if self.counts[k] == 0:
            del self.counts[k]
        self.total += count

    def estimate(self, key: Key, salt: int = 0) -> int:
        return self.counts.get(key_bytes(key, salt), 0)

    def clear(self):
        self.counts.clear()
        self.total = 0

    def copy(self) -> "ExactCounter":
        other = ExactCounter()
        other.counts = self.counts.copy()
        other.total = self.total
        return other


def make_counter(exact: bool = False, depth: int = None, width: int = None, seed: int = 0):
    return ExactCounter() if exact else CountMinSketch(depth, width, seed)


def add_all(counter, keys: Iterable[Key], salt: int = 0, count: int = 1):
    for key in keys:
        counter.add(key, count, salt)
