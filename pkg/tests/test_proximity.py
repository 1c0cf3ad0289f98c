"""
Tests for the distance-threshold detectors in app/services/detectors/proximity.py.

Key scenarios:
  - twelve-point toy stream (R=1, K=3, w=7, s=5): outliers per window
  - MCOD micro-clusters form and dissolve with the window
  - MCOD scores on the first window
  - LEAP evidence list and trigger list on the first window
  - CPOD probing cases and bands
  - MCOD labels cluster members without counting and keeps its cluster invariants
  - CPOD files new cores into nearby cores and reproduces hand-placed cores
  - LEAP recounts only the trigger list and short samples on a slide
  - all three agree with a brute-force range count on random streams
    (200 randomized windows per detector in the slow suite)
  - bad parameters raise DetectorError
"""

from unittest.mock import patch

import numpy as np
import pytest

from app.core.errors import DetectorError
from app.core.stream import Batch, WindowSpec
from app.services.detectors.base import brute_force_outliers
from app.services.detectors.proximity import CPOD, LEAP, MCOD, band_of, probe_case
from tests.conftest import (
    TOY_K,
    TOY_POINTS,
    TOY_R,
    TOY_WINDOW,
    toy_first_window,
    toy_slide,
    p,
    random_stream,
    slides,
)

DETECTORS = [MCOD, CPOD, LEAP]


def _build(cls, window=TOY_WINDOW, R=TOY_R, K=TOY_K):
    return cls(window, seed=0, max_distance=R, min_neighbors=K)


def _outliers(detector) -> set[int]:
    return set(detector.content.ordinals[detector.labels()].tolist())


def _randomized_run(cls, seed: int, max_size: int) -> int:
    """Ten windows with random size, slide, dimension, R and K; returns how many were checked."""
    rng = np.random.default_rng(seed)
    size = int(rng.integers(8, max_size + 1))
    slide = int(rng.integers(1, size + 1))
    d = int(rng.integers(1, 9))
    R = float(rng.uniform(0.1, 0.6) * np.sqrt(d))
    K = int(rng.integers(1, 11))
    spec = WindowSpec(size, slide)
    stream = random_stream(size + 9 * slide, d, seed)
    detector = cls(spec, seed=seed, max_distance=R, min_neighbors=K)
    detector.train(stream.take(slice(0, size)))
    checked = 0
    for step in [None] + list(slides(stream, spec, size)):
        if step is not None:
            detector.process_slide(*step)
        expected = brute_force_outliers(detector.content.X, R, K)
        assert detector.labels().tolist() == expected.tolist(), (cls.name, seed, size, slide, d, R, K, checked)
        checked += 1
    return checked


class TestRunningExample:
    @pytest.mark.parametrize("cls", DETECTORS)
    def test_first_window_outliers(self, cls):
        detector = _build(cls)
        detector.train(toy_first_window())
        assert _outliers(detector) == {p(5), p(7)}

    @pytest.mark.parametrize("cls", DETECTORS)
    def test_second_window_outliers(self, cls):
        detector = _build(cls)
        detector.train(toy_first_window())
        scores = detector.process_slide(*toy_slide())
        assert len(scores) == 7
        assert detector.content.ordinals.tolist() == list(range(5, 12))
        assert _outliers(detector) == {p(6), p(10), p(12)}

    @pytest.mark.parametrize("cls", DETECTORS)
    def test_outliers_outscore_inliers(self, cls):
        detector = _build(cls)
        detector.train(toy_first_window())
        scores = detector.process_slide(*toy_slide())
        flagged = detector.labels()
        assert scores[flagged].min() > scores[~flagged].max()


class TestMCOD:
    def test_first_cluster(self):
        mcod = _build(MCOD)
        mcod.train(toy_first_window())
        assert [mc.members for mc in mcod.micro_clusters] == [{p(1), p(2), p(3), p(6)}]
        assert set(mcod.pd) == {p(4), p(5), p(7)}

    def test_cluster_dissolves_and_new_one_forms(self):
        mcod = _build(MCOD)
        mcod.train(toy_first_window())
        mcod.process_slide(*toy_slide())
        assert [mc.members for mc in mcod.micro_clusters] == [{p(7), p(8), p(9), p(11)}]
        assert p(6) in mcod.pd

    def test_first_window_scores(self):
        mcod = _build(MCOD)
        mcod.train(toy_first_window())
        scores = dict(zip(mcod.content.ordinals.tolist(), mcod.score_window()))
        assert scores[p(7)] == pytest.approx(2.6)
        assert scores[p(5)] == pytest.approx(np.hypot(1.6, 0.6) / 2)
        assert scores[p(4)] == pytest.approx(np.hypot(0.85, 0.3) / 4, abs=1e-3)
        assert scores[p(1)] == pytest.approx(0.4 / 4)
        assert scores[p(3)] == 0.0

    def test_isolated_sample_scores_inf(self):
        mcod = MCOD(WindowSpec(3, 1), max_distance=0.1, min_neighbors=1)
        mcod.train(Batch.from_arrays([[0.0], [5.0], [10.0]]))
        assert np.isinf(mcod.score_window()).all()


    def test_cluster_members_are_labeled_without_counting(self):
        mcod = _build(MCOD)
        mcod.train(toy_first_window())
        with patch.object(MCOD, "neighbor_count", autospec=True, side_effect=MCOD.neighbor_count) as counted:
            labels = mcod.labels()
        assert sorted(c.args[1] for c in counted.call_args_list) == [p(4), p(5), p(7)]
        assert set(mcod.content.ordinals[labels].tolist()) == {p(5), p(7)}

    def test_candidates_skip_far_clusters(self):
        mcod = MCOD(WindowSpec(5, 1), max_distance=1.0, min_neighbors=2)
        mcod.train(Batch.from_arrays([[0.0], [0.1], [0.2], [5.0], [5.1]]))
        assert [mc.members for mc in mcod.micro_clusters] == [{0, 1, 2}]
        assert mcod.candidates(3) == [4]
        assert set(mcod.candidates(0)) == {1, 2, 3, 4}
        assert mcod.labels().tolist() == [False, False, False, True, True]

    def test_join_radius_is_inclusive(self):
        mcod = MCOD(WindowSpec(5, 1), max_distance=1.0, min_neighbors=2)
        mcod.train(Batch.from_arrays([[0.0], [0.5], [-0.5], [1.0], [3.0]]))
        assert [mc.members for mc in mcod.micro_clusters] == [{0, 1, 2}]
        assert set(mcod.pd) == {3, 4}

    def test_structure_invariants_hold_while_sliding(self):
        spec = WindowSpec(60, 10)
        R, K = 0.3, 3
        stream = random_stream(260, 2, 7)
        mcod = MCOD(spec, max_distance=R, min_neighbors=K)
        mcod.train(stream.take(slice(0, 60)))
        steps = [None] + list(slides(stream, spec, 60))
        for step in steps:
            if step is not None:
                mcod.process_slide(*step)
            members = [m for mc in mcod.micro_clusters for m in mc.members]
            assert len(members) == len(set(members))
            assert set(members).isdisjoint(mcod.pd)
            assert set(members) | set(mcod.pd) == set(mcod.content.ordinals.tolist())
            for mc in mcod.micro_clusters:
                assert len(mc.members) >= K + 1
                dist = [np.linalg.norm(mcod.points[m] - mc.center) for m in mc.members]
                assert max(dist) <= R / 2 + 1e-12

class TestLEAP:
    def test_evidence_newest_slide_first(self):
        leap = _build(LEAP)
        leap.train(toy_first_window())
        assert leap.evidence(p(1)) == [p(6), p(2), p(3)]

    def test_trigger_list(self):
        leap = _build(LEAP)
        leap.train(toy_first_window())
        assert leap.trigger_list == {p(6), p(7)}

    def test_slide_index(self):
        leap = _build(LEAP)
        assert [leap.slide_of(o) for o in (0, 4, 5, 11)] == [0, 0, 1, 2]

    def test_evidence_drops_expired(self):
        leap = _build(LEAP)
        leap.train(toy_first_window())
        leap.process_slide(*toy_slide())
        for o in range(5, 12):
            assert all(n >= 5 for n in leap.evidence(o))


    def test_slide_recounts_triggered_and_short_samples_only(self):
        leap = _build(LEAP)
        leap.train(toy_first_window())
        short = set(leap.content.ordinals[leap.labels()].tolist())
        expected = (leap.trigger_list | short) - set(range(5))
        with patch.object(LEAP, "_probe", autospec=True, side_effect=LEAP._probe) as counted:
            leap.process_slide(*toy_slide())
        recounted = {c.args[1]: c.args[2:] for c in counted.call_args_list if c.args[1] < 7}
        assert set(recounted) == expected == {p(6), p(7)}
        # p7 was already short, so only the arriving slides are scanned
        assert recounted[p(7)] == ({1, 2},)
        assert recounted[p(6)] == ()
        assert _outliers(leap) == {p(6), p(10), p(12)}

class TestCPOD:
    @pytest.mark.parametrize("d0,case", [(0.0, 1), (0.5, 1), (0.7, 2), (1.0, 2), (1.5, 3), (2.0, 3), (2.1, 4)])
    def test_probe_case(self, d0, case):
        assert probe_case(d0, 1.0) == case

    @pytest.mark.parametrize("d,band", [(0.0, 0), (0.5, 0), (0.6, 1), (1.0, 1), (1.2, 2), (1.9, 3), (2.0, 3)])
    def test_band_of(self, d, band):
        assert band_of(d, 1.0) == band

    def test_every_sample_indexed(self):
        cpod = _build(CPOD)
        cpod.train(toy_first_window())
        indexed = set().union(*(c.members() for c in cpod.cores)) | cpod.unindexed
        assert indexed == set(range(7))

    def test_scores_follow_counts(self):
        cpod = _build(CPOD)
        cpod.train(toy_first_window())
        counts = cpod.neighbor_counts()
        np.testing.assert_allclose(cpod.score_window(), 1.0 / (counts + 1e-9))


    def test_new_core_is_filed_into_nearby_cores(self):
        cpod = CPOD(WindowSpec(3, 1), max_distance=1.0, min_neighbors=2)
        cpod.train(Batch.from_arrays([[0.0], [0.7], [1.6]]))
        assert len(cpod.cores) == 2
        assert 2 in cpod.cores[0].members()
        assert cpod.labels().tolist() == [True, False, True]

    def test_cores_stay_more_than_r_apart(self):
        spec = WindowSpec(50, 10)
        stream = random_stream(200, 2, 4)
        cpod = CPOD(spec, max_distance=0.2, min_neighbors=3)
        cpod.train(stream.take(slice(0, 50)))
        for arriving, expired in slides(stream, spec, 50):
            cpod.process_slide(arriving, expired)
            locations = np.vstack([c.location for c in cpod.cores])
            gaps = np.linalg.norm(locations[:, None] - locations[None, :], axis=2)
            np.fill_diagonal(gaps, np.inf)
            assert gaps.min() > 0.2

    def test_stated_cores_first_window(self):
        cpod = CPOD(TOY_WINDOW, max_distance=TOY_R, min_neighbors=TOY_K, search="limited")
        cpod.train(toy_first_window())
        cpod.use_cores(TOY_POINTS[[p(2), p(4)]])
        assert len(cpod.cores) == 2
        assert _outliers(cpod) == {p(5), p(7)}

    def test_stated_cores_second_window(self):
        cpod = CPOD(TOY_WINDOW, max_distance=TOY_R, min_neighbors=TOY_K, search="limited")
        cpod.train(toy_first_window())
        cpod.process_slide(*toy_slide())
        cpod.use_cores(TOY_POINTS[[p(10)]])
        assert {p(6), p(7)} <= _outliers(cpod)

    def test_exhaustive_search_keeps_p7_normal_under_stated_cores(self):
        cpod = _build(CPOD)
        cpod.train(toy_first_window())
        cpod.process_slide(*toy_slide())
        cpod.use_cores(TOY_POINTS[[p(10)]])
        assert _outliers(cpod) == {p(6), p(10), p(12)}

    def test_unknown_search_mode(self):
        with pytest.raises(DetectorError):
            CPOD(TOY_WINDOW, search="greedy")

    def test_use_cores_before_train(self):
        with pytest.raises(DetectorError):
            _build(CPOD).use_cores([[0.0, 0.0]])

class TestAgainstBruteForce:
    @pytest.mark.parametrize("cls", DETECTORS)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_labels_match_range_count(self, cls, seed):
        spec = WindowSpec(40, 10)
        R, K = 0.25, 4
        stream = random_stream(160, 2, seed)
        detector = cls(spec, seed=seed, max_distance=R, min_neighbors=K)
        detector.train(stream.take(slice(0, 40)))
        np.testing.assert_array_equal(detector.labels(), brute_force_outliers(detector.content.X, R, K))
        for arriving, expired in slides(stream, spec, 40):
            detector.process_slide(arriving, expired)
            np.testing.assert_array_equal(detector.labels(), brute_force_outliers(detector.content.X, R, K))

    @pytest.mark.parametrize("cls", DETECTORS)
    def test_randomized_small_windows(self, cls):
        assert sum(_randomized_run(cls, seed, max_size=64) for seed in range(5)) == 50

    @pytest.mark.slow
    @pytest.mark.parametrize("cls", DETECTORS)
    def test_randomized_windows(self, cls):
        assert sum(_randomized_run(cls, 100 + seed, max_size=256) for seed in range(20)) == 200

    def test_repeated_points_are_neighbors(self):
        X = np.array([[0.0, 0.0]] * 4 + [[3.0, 3.0]])
        for cls in DETECTORS:
            detector = cls(WindowSpec(5, 1), max_distance=0.5, min_neighbors=3)
            detector.train(Batch.from_arrays(X))
            assert detector.labels().tolist() == [False] * 4 + [True]


class TestParameters:
    @pytest.mark.parametrize("cls", DETECTORS)
    def test_non_positive_radius(self, cls):
        with pytest.raises(DetectorError):
            cls(TOY_WINDOW, max_distance=0.0, min_neighbors=3)

    @pytest.mark.parametrize("cls", DETECTORS)
    def test_zero_neighbors(self, cls):
        with pytest.raises(DetectorError):
            cls(TOY_WINDOW, max_distance=1.0, min_neighbors=0)

    def test_slide_before_train(self):
        arriving, expired = toy_slide()
        with pytest.raises(DetectorError):
            _build(MCOD).process_slide(arriving, expired)

    def test_expired_must_be_oldest(self):
        mcod = _build(MCOD)
        mcod.train(toy_first_window())
        full = Batch.from_arrays(TOY_POINTS)
        with pytest.raises(ValueError):
            mcod.process_slide(full.take(slice(7, 12)), full.take(slice(1, 6)))
