"""
Random-search tuning on the validation windows.
"""

import itertools
import logging
import math
from typing import Any, Callable, Optional

import numpy as np

from app.core.errors import DetectorError
from app.core.stream import WindowedStream
from app.schemas.schemas import TuningResult
from app.services.detectors import Grid, grid_size, hyper_grid
from app.services.harness import train_samples, validation_map

logger = logging.getLogger(__name__)

Evaluator = Callable[[str, dict[str, Any], WindowedStream, int], float]


def decode_config(grid: Grid, index: int) -> dict[str, Any]:
    """Mixed-radix decoding of a flat index into one configuration; the last key varies fastest."""
    config = {}
    for key in reversed(list(grid)):
        values = grid[key]
        index, digit = divmod(index, len(values))
        config[key] = values[digit]
    return {key: config[key] for key in grid}


def sample_configs(grid: Grid, budget: int, rng: np.random.Generator) -> list[dict[str, Any]]:
    """Every configuration when the grid fits the budget, else `budget` distinct ones uniformly."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise DetectorError("cannot tune over an empty grid")
    if budget < 1:
        raise DetectorError(f"tuning budget must be at least 1, got {budget}")
    total = grid_size(grid)
    if total <= budget:
        keys = list(grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*grid.values())]
    picks = rng.choice(total, size=budget, replace=False)
    return [decode_config(grid, int(i)) for i in picks]


def _plain(value):
    return value.item() if isinstance(value, np.generic) else value


def tune(
    name: str,
    stream: WindowedStream,
    budget: int,
    seed: int = 0,
    overrides: Optional[Grid] = None,
    evaluator: Evaluator = validation_map,
) -> TuningResult:
    """Pick the configuration with the highest validation MAP; ties keep the earliest sampled."""
    grid = hyper_grid(name, train_samples(stream), overrides)
    configs = sample_configs(grid, budget, np.random.default_rng(seed))
    logger.info("tuning %s on %s: %d configs", name, stream.name, len(configs))

    trials = []
    best: Optional[tuple[float, dict]] = None
    for params in configs:
        params = {k: _plain(v) for k, v in params.items()}
        try:
            score = evaluator(name, params, stream, seed)
        except ValueError as exc:
            logger.warning("%s on %s: config %s failed: %s", name, stream.name, params, exc)
            trials.append({"params": params, "map": None, "error": str(exc)})
            continue
        trials.append({"params": params, "map": score})
        if best is None or score > best[0]:
            best = (score, params)

    if best is None:
        raise DetectorError(f"{name}: every sampled configuration failed on {stream.name}")
    logger.info("%s on %s: best validation MAP %.4f with %s", name, stream.name, best[0], best[1])
    return TuningResult(detector=name, dataset=stream.name, params=best[1], map=best[0], seed=seed,
                        trials=trials)


def success_probability(grid_total: int, budget: int) -> float:
    """Chance that uniform sampling without replacement hits one planted configuration."""
    if budget >= grid_total:
        return 1.0
    return 1 - math.comb(grid_total - 1, budget) / math.comb(grid_total, budget)
