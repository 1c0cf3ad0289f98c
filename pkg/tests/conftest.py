import os

# Must be set before any app imports so pydantic-settings finds them
os.environ.setdefault("STREAMBENCH_LOG_LEVEL", "WARNING")
os.environ.setdefault("STREAMBENCH_CMS_WIDTH", "2048")
os.environ.setdefault("STREAMBENCH_N_RUNS", "2")
os.environ.setdefault("STREAMBENCH_TUNING_BUDGET", "4")
os.environ.setdefault("STREAMBENCH_OUTPUT_DIR", "results-test")

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.core.stream import Batch, WindowSpec
from app.services.ingest import Dataset


# ── Toy stream: twelve 2-d points, R=1, K=3, w=7, s=5 ────────────────────

TOY_POINTS = np.array([
    [0.4, 0.0],   # p1
    [0.0, 0.4],   # p2
    [0.0, 0.0],   # p3
    [0.85, 0.3],  # p4
    [1.6, 0.6],   # p5
    [-0.4, 0.0],  # p6
    [2.4, 1.0],   # p7
    [2.6, 1.3],   # p8
    [2.7, 1.0],   # p9
    [3.5, 2.0],   # p10
    [2.9, 1.1],   # p11
    [4.3, 2.5],   # p12
])
TOY_WINDOW = WindowSpec(7, 5)
TOY_R = 1.0
TOY_K = 3


def p(i: int) -> int:
    """Ordinal of toy-stream point p_i."""
    return i - 1


def toy_first_window() -> Batch:
    return Batch.from_arrays(TOY_POINTS[:7])


def toy_slide() -> tuple[Batch, Batch]:
    """(arriving, expired) for the move from window 1 to window 2."""
    full = Batch.from_arrays(TOY_POINTS)
    return full.take(slice(7, 12)), full.take(slice(0, 5))


def gaussian_dataset(n: int = 600, d: int = 2, ratio: float = 0.05, shift: float = 10.0, seed: int = 0) -> Dataset:
    """Standard-normal normals; anomalies displaced by `shift` standard deviations."""
    rng = np.random.default_rng(seed)
    n_anom = max(1, int(round(n * ratio)))
    normals = rng.standard_normal((n - n_anom, d))
    anomalies = rng.standard_normal((n_anom, d)) + shift
    X = np.vstack([normals, anomalies])
    labels = np.r_[np.zeros(n - n_anom, dtype=bool), np.ones(n_anom, dtype=bool)]
    return Dataset(f"gauss_s{seed}", X, labels)


def random_stream(n: int, d: int, seed: int) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch.from_arrays(rng.uniform(size=(n, d)), rng.random(n) < 0.05)


def slides(batch: Batch, spec: WindowSpec, start: int):
    """(arriving, expired) pairs after an initial window ending at `start`."""
    pos = start
    while pos + spec.slide <= len(batch):
        arriving = batch.take(slice(pos, pos + spec.slide))
        head = pos - spec.size
        expired = batch.take(slice(max(0, head), max(0, head + spec.slide)))
        yield arriving, expired
        pos += spec.slide


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def easy_dataset():
    return gaussian_dataset()
