"""
Tests for the detector registry in app/services/detectors/__init__.py.

Key scenarios:
  - all sixteen detectors are registered, split into online and offline
  - data-dependent grid values (sample budget, radii, neighbor counts)
  - overrides replace one grid key and reject empty lists
  - build_detector applies fixed values and wraps bad parameters in DetectorError
"""

import numpy as np
import pytest

from app.core.errors import DetectorError
from app.core.stream import ScoreOrientation, WindowSpec
from app.services.detectors import (
    OFFLINE_DETECTORS,
    ONLINE_DETECTORS,
    REGISTRY,
    build_detector,
    get_detector,
    grid_size,
    hyper_grid,
    max_distance_grid,
    max_samples_for,
    min_neighbors_grid,
)

X_REF = np.random.default_rng(0).uniform(size=(1000, 2))
SPEC = WindowSpec(100, 50)


class TestRegistry:
    def test_sixteen_detectors(self):
        assert len(REGISTRY) == 16
        assert len(ONLINE_DETECTORS) == 10
        assert set(OFFLINE_DETECTORS) == {"knnw", "lof", "iforest", "ocrf", "loda_batch", "xstream_batch"}

    def test_deterministic_set(self):
        deterministic = {name for name, info in REGISTRY.items() if info.deterministic}
        assert deterministic == {"mcod", "cpod", "leap", "rshash", "stare", "knnw", "lof"}

    def test_orientations(self):
        assert get_detector("loda").orientation == ScoreOrientation.LOWER_IS_ANOMALOUS
        assert get_detector("mcod").orientation == ScoreOrientation.HIGHER_IS_ANOMALOUS

    def test_window_type_only_for_online(self):
        assert get_detector("knnw").window_type is None
        assert get_detector("hst").window_for(SPEC) == WindowSpec(100, 100)
        assert get_detector("mcod").window_for(SPEC) == SPEC

    def test_unknown(self):
        with pytest.raises(DetectorError, match="unknown detector"):
            get_detector("nope")


class TestGrids:
    def test_max_samples(self):
        assert max_samples_for(10) == 4
        assert max_samples_for(3) == 2
        assert max_samples_for(1000) == 256

    def test_min_neighbors_covers_one_to_sixty_four(self):
        assert min_neighbors_grid() == list(range(1, 65))

    def test_max_distance_grid(self):
        grid = max_distance_grid(X_REF)
        assert len(grid) == 100
        assert grid[0] == pytest.approx(0.1)
        assert grid == sorted(grid)

    def test_max_distance_single_sample(self):
        assert max_distance_grid(np.zeros((1, 2))) == [1.0]

    def test_proximity_grid_size(self):
        assert grid_size(hyper_grid("mcod", X_REF)) == 6400

    def test_forget_grid_includes_sample_budget(self):
        assert hyper_grid("hstf", np.zeros((50, 2)))["forget_threshold"] == [20, 64, 128, 256, 512]

    def test_neighbor_grid_below_train_size(self):
        assert hyper_grid("knnw", np.zeros((25, 2)))["n_neighbors"] == [5, 10, 15, 20]
        assert hyper_grid("lof", np.zeros((4, 2)))["n_neighbors"] == [3]

    def test_override(self):
        grid = hyper_grid("loda", X_REF, {"n_bins": [7]})
        assert grid == {"n_projections": [25, 50, 100], "n_bins": [7]}

    def test_empty_override(self):
        with pytest.raises(DetectorError):
            hyper_grid("loda", X_REF, {"n_bins": []})


class TestBuildDetector:
    def test_fixed_values_from_training_data(self):
        detector = build_detector("rrcf", {"n_trees": 25}, SPEC, X_train=X_REF)
        assert detector.hyper_params["max_samples"] == 256

    def test_tumbling_window_applied(self):
        detector = build_detector("loda", {"n_projections": 10, "n_bins": 10}, SPEC)
        assert detector.window.is_tumbling

    def test_offline(self):
        detector = build_detector("knnw", {"n_neighbors": 5}, SPEC)
        assert detector.hyper_params["n_neighbors"] == 5

    def test_bad_parameter(self):
        with pytest.raises(DetectorError, match="invalid hyper-parameters"):
            build_detector("mcod", {"radius": 1.0}, SPEC)
