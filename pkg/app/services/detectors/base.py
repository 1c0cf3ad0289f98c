"""
The detector contract.

Online detectors follow one life-cycle: `train(samples)` on the train
partition, then `process_slide(arriving, expired)` once per window. Every
call to `process_slide` returns one score per sample of the current window,
in window order. Offline detectors fit on the train partition and score one
large batch.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, ClassVar

import numpy as np

from app.core.errors import DetectorError
from app.core.stream import Batch, ScoreOrientation, WindowSpec, WindowType

logger = logging.getLogger(__name__)


class StreamDetector(ABC):
    name: ClassVar[str]
    ORIENTATION: ClassVar[ScoreOrientation] = ScoreOrientation.HIGHER_IS_ANOMALOUS
    WINDOW_TYPE: ClassVar[WindowType] = WindowType.SLIDING
    DETERMINISTIC: ClassVar[bool] = True

    def __init__(self, window: WindowSpec, seed: int = 0):
        self.window = window
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.content: Batch | None = None
        if self.WINDOW_TYPE == WindowType.TUMBLING and not window.is_tumbling:
            raise DetectorError(f"{self.name} runs on tumbling windows, got w={window.size} s={window.slide}")

    def orientation(self) -> ScoreOrientation:
        return self.ORIENTATION

    @property
    @abstractmethod
    def hyper_params(self) -> dict[str, Any]:
        ...

    @property
    def trained(self) -> bool:
        return self.content is not None

    def train(self, samples: Batch) -> None:
        if len(samples) == 0:
            raise DetectorError(f"{self.name}: cannot train on zero samples")
        self._fit(samples)
        self.content = samples.take(slice(-self.window.size, None))
        self._prime(self.content)

    def process_slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        if self.content is None:
            raise DetectorError(f"{self.name}: process_slide called before train")
        self.content = self.content.slide(arriving, expired)
        scores = np.asarray(self._slide(arriving, expired), dtype=float)
        if scores.shape != (len(self.content),):
            raise DetectorError(
                f"{self.name}: produced {scores.shape[0]} scores for a window of {len(self.content)}"
            )
        return scores

    def _fit(self, samples: Batch) -> None:
        """Build the model from training samples. Default: nothing to learn."""

    def _prime(self, window: Batch) -> None:
        """Load the last training window into the streaming state."""

    @abstractmethod
    def _slide(self, arriving: Batch, expired: Batch) -> np.ndarray:
        ...

    def __repr__(self):
        params = ", ".join(f"{k}={v}" for k, v in self.hyper_params.items())
        return f"{type(self).__name__}({params}, seed={self.seed})"


class BatchDetector(ABC):
    """One large window: fit on the train partition, score the test portion in one go."""

    name: ClassVar[str]
    ORIENTATION: ClassVar[ScoreOrientation] = ScoreOrientation.HIGHER_IS_ANOMALOUS
    DETERMINISTIC: ClassVar[bool] = True

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.fitted = False

    def orientation(self) -> ScoreOrientation:
        return self.ORIENTATION

    @property
    @abstractmethod
    def hyper_params(self) -> dict[str, Any]:
        ...

    def fit(self, samples: Batch) -> "BatchDetector":
        if len(samples) == 0:
            raise DetectorError(f"{self.name}: cannot fit on zero samples")
        self._fit(samples.X)
        self.fitted = True
        return self

    def score(self, samples: Batch) -> np.ndarray:
        if not self.fitted:
            raise DetectorError(f"{self.name}: score called before fit")
        return np.asarray(self._score(samples.X), dtype=float)

    def fit_score(self, samples: Batch) -> np.ndarray:
        return self.fit(samples).score(samples)

    @abstractmethod
    def _fit(self, X: np.ndarray) -> None:
        ...

    @abstractmethod
    def _score(self, X: np.ndarray) -> np.ndarray:
        ...


def brute_force_neighbor_counts(X: np.ndarray, radius: float) -> np.ndarray:
    """Neighbors strictly closer than `radius`, excluding the sample itself."""
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    return (dist < radius).sum(axis=1) - 1


def brute_force_outliers(X: np.ndarray, radius: float, k: int) -> np.ndarray:
    return brute_force_neighbor_counts(X, radius) < k
