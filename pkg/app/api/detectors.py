import logging

import numpy as np
from fastapi import APIRouter, HTTPException

from app.core.stream import Batch, WindowSpec, WindowedStream, normalize_scores
from app.schemas.schemas import DetectorOut, ScoreRequest, ScoreResponse, WindowScores
from app.services.detectors import REGISTRY, build_detector, grid_size, hyper_grid
from app.services.evaluation import ScoredWindow, auc_roc, average_precision

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/detectors", tags=["detectors"])

# Grid sizes are reported for a fixed reference sample, since some grids depend on the data.
_REFERENCE = np.random.default_rng(0).uniform(size=(512, 2))


def _finite(scores: np.ndarray) -> list[float]:
    limit = np.finfo(float).max
    return np.nan_to_num(scores, posinf=limit, neginf=-limit).tolist()


def _window_metrics(window: ScoredWindow) -> tuple:
    ap = average_precision(window) if window.n_anomalies else None
    auc = auc_roc(window) if window.both_classes else None
    return ap, auc


@router.get("", response_model=list[DetectorOut])
async def list_detectors():
    out = []
    for name, info in REGISTRY.items():
        grid = hyper_grid(name, _REFERENCE)
        out.append(DetectorOut(
            name=name,
            online=info.online,
            orientation=info.orientation.value,
            window_type=info.window_type.value if info.window_type else None,
            deterministic=info.deterministic,
            grid_sizes={key: len(values) for key, values in grid.items()} | {"total": grid_size(grid)},
        ))
    return out


@router.post("/{name}/score", response_model=ScoreResponse)
async def score(name: str, body: ScoreRequest):
    info = REGISTRY.get(name)
    if info is None:
        raise HTTPException(status_code=404, detail=f"Unknown detector '{name}'")
    try:
        X = np.asarray(body.samples, dtype=float)
        if X.ndim != 2 or len(X) < 2:
            raise ValueError("samples must be a non-empty list of equal-length feature rows")
        labels = np.asarray(body.labels, dtype=bool) if body.labels is not None else None
        batch = Batch.from_arrays(X, labels)
        spec = info.window_for(WindowSpec(body.window_size, body.window_slide))
        train_size = body.train_size or spec.size
        if train_size >= len(batch):
            raise ValueError(f"train_size {train_size} leaves no samples to score")

        windows = []
        if info.online:
            stream = WindowedStream(batch, spec)
            n_train = sum(1 for w in stream.windows if w.stop <= train_size)
            if n_train == 0 or n_train == len(stream):
                raise ValueError("train_size must cover at least one window and leave one to score")
            train = stream.span(range(0, n_train))
            detector = build_detector(name, body.params, spec, body.seed, X_train=train.X)
            detector.train(train)
            for i in range(n_train, len(stream)):
                contents, arriving, expired = stream.window(i)
                scores = normalize_scores(detector.process_slide(arriving, expired), detector.orientation())
                windows.append((i, contents, scores))
        else:
            train, rest = batch.take(slice(0, train_size)), batch.take(slice(train_size, None))
            detector = build_detector(name, body.params, spec, body.seed, X_train=train.X)
            scores = normalize_scores(detector.fit(train).score(rest), detector.orientation())
            windows.append((0, rest, scores))

        out, aps = [], []
        for index, contents, scores in windows:
            ap = auc = None
            if labels is not None:
                ap, auc = _window_metrics(ScoredWindow(scores, contents.labels, index, contents.ordinals))
                if ap is not None:
                    aps.append(ap)
            out.append(WindowScores(index=index, ordinals=contents.ordinals.tolist(), scores=_finite(scores),
                                    ap=ap, auc=auc))
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))

    return ScoreResponse(
        detector=name,
        params=detector.hyper_params,
        windows=out,
        map=float(np.mean(aps)) if aps else None,
    )
