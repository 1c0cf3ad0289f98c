"""
Forward-chaining runs of one detector configuration over a partitioned stream.

The stream is cut into train, validation and test windows. A run trains on
the train windows, then slides through the windows that follow; only the
windows of the requested phase are scored for evaluation. Offline detectors
fit on the train samples and score the phase's samples as one large window.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np

from app.core.errors import StreamError
from app.core.stream import WindowSpec, WindowedStream, normalize_scores
from app.services.detectors import build_detector, get_detector
from app.services.evaluation import ScoredWindow, StreamMetrics, TimeProbe, evaluate_windows
from app.services.ingest import Dataset, generate_stream, partition

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    VALIDATION = "validation"
    TEST = "test"


@dataclass
class RunResult:
    metrics: StreamMetrics
    probe: TimeProbe
    windows: list[ScoredWindow]


def prepare_stream(dataset: Dataset, window: WindowSpec, seed: int = 0,
                   fractions: Optional[tuple[float, float, float]] = None) -> WindowedStream:
    """Stratified stream of `dataset`, windowed and partitioned."""
    stream = generate_stream(dataset, window, seed)
    partition(stream, fractions)
    return stream


def stream_for(name: str, stream: WindowedStream,
               fractions: Optional[tuple[float, float, float]] = None) -> WindowedStream:
    """The stream as the detector consumes it: tumbling detectors get s = w windows."""
    spec = get_detector(name).window_for(stream.spec)
    if spec == stream.spec:
        return stream
    tumbling = stream.rewindow(spec)
    partition(tumbling, fractions)
    return tumbling


def _phase_range(stream: WindowedStream, phase: Phase) -> range:
    if stream.partition is None:
        raise StreamError(f"{stream.name}: stream is not partitioned")
    return stream.partition.val if phase == Phase.VALIDATION else stream.partition.test


def run_online(name: str, params: dict[str, Any], stream: WindowedStream, seed: int,
               phase: Phase = Phase.TEST) -> RunResult:
    parts = stream.partition
    target = _phase_range(stream, phase)
    probe = TimeProbe()
    train = stream.span(parts.train)
    with probe.training():
        detector = build_detector(name, params, stream.spec, seed, X_train=train.X)
        detector.train(train)
    scored = []
    for i in range(parts.train.stop, target.stop):
        contents, arriving, expired = stream.window(i)
        with probe.update():
            raw = detector.process_slide(arriving, expired)
        if i in target:
            scores = normalize_scores(raw, detector.orientation())
            scored.append(ScoredWindow(scores, contents.labels, i, contents.ordinals))
    return RunResult(evaluate_windows(scored), probe, scored)


def run_offline(name: str, params: dict[str, Any], stream: WindowedStream, seed: int,
                phase: Phase = Phase.TEST) -> RunResult:
    parts = stream.partition
    target = _phase_range(stream, phase)
    probe = TimeProbe()
    train = stream.span(parts.train)
    with probe.training():
        detector = build_detector(name, params, stream.spec, seed, X_train=train.X)
        detector.fit(train)
    batch = stream.span(target)
    with probe.update():
        raw = detector.score(batch)
    scores = normalize_scores(raw, detector.orientation())
    scored = [ScoredWindow(scores, batch.labels, target.start, batch.ordinals)]
    return RunResult(evaluate_windows(scored), probe, scored)


def run_config(name: str, params: dict[str, Any], stream: WindowedStream, seed: int,
               phase: Phase = Phase.TEST) -> RunResult:
    runner = run_online if get_detector(name).online else run_offline
    return runner(name, params, stream, seed, phase)


def validation_map(name: str, params: dict[str, Any], stream: WindowedStream, seed: int) -> float:
    return run_config(name, params, stream, seed, Phase.VALIDATION).metrics.map


def train_samples(stream: WindowedStream) -> np.ndarray:
    return stream.span(stream.partition.train).X
