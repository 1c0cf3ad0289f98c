"""
Tests for LODA and XSTREAM in app/services/detectors/projection.py.

Key scenarios:
  - online histogram keeps at most b bins by merging the closest pair
  - both density rules, and samples outside the histogram range
  - projection sparsity conventions
  - LODA histograms count every sample once, in both modes and on 50 random streams
  - half-space chain bin vectors: first selection shifts, later ones halve
  - chain score is the minimum of 2^l times the level count
  - sketched XSTREAM scores never fall below exact-count scores
  - XSTREAM reference sketches hold exactly one window on 50 random streams
  - far-away samples get the lowest density
"""

import numpy as np
import pytest

from app.core.errors import DetectorError
from app.core.stream import Batch, WindowSpec
from app.services.detectors.projection import (
    LODA,
    XSTREAM,
    DensityRule,
    HalfSpaceChains,
    LodaEnsemble,
    OnlineHistogram,
    chain_score,
    loda_projections,
    sparse_projections,
)
from tests.conftest import random_stream, slides

TUMBLING = WindowSpec(32, 32)


def _histogram(values, capacity=10) -> OnlineHistogram:
    hist = OnlineHistogram(capacity)
    for v in values:
        hist.insert(v)
    return hist


def _random_tumbling(seed: int):
    rng = np.random.default_rng(seed)
    w = int(rng.integers(8, 48))
    return WindowSpec(w, w), random_stream(6 * w, int(rng.integers(1, 6)), seed)


class TestOnlineHistogram:
    def test_repeated_values_share_a_bin(self):
        hist = _histogram([1, 2, 2, 5])
        assert hist.pairs() == [(1.0, 1), (2.0, 2), (5.0, 1)]
        assert hist.total == 4

    def test_overflow_merges_closest(self):
        hist = _histogram([0, 1, 10], capacity=2)
        assert hist.z == [0.5, 10.0]
        assert hist.m == [2, 1]
        assert hist.pairs() == [(0.0, 0), (0.5, 2), (10.0, 1)]

    def test_trapezoid_density(self):
        assert _histogram([1, 2, 2, 5]).density(3.0) == pytest.approx(3 / 24)

    def test_printed_density(self):
        hist = _histogram([1, 2, 2, 5])
        assert hist.density(3.0, DensityRule.PRINTED) == pytest.approx(9 / 24)

    def test_printed_density_single_pair(self):
        hist = _histogram([1, 2], capacity=2)
        assert hist.density(1.5, DensityRule.PRINTED) == pytest.approx(3 / 4)

    def test_outside_range_is_none(self):
        hist = _histogram([1, 2, 2, 5])
        assert hist.density(0.5) is None
        assert hist.density(5.5) is None

    def test_single_value_is_none(self):
        assert _histogram([3, 3]).density(3.0) is None

    def test_zero_capacity_rejected(self):
        with pytest.raises(DetectorError):
            OnlineHistogram(0)


class TestProjections:
    def test_zeroed_convention(self):
        W = loda_projections(9, 20, np.random.default_rng(0), "zeroed")
        assert W.shape == (20, 9)
        assert ((W == 0).sum(axis=1) == 3).all()

    def test_original_convention(self):
        W = loda_projections(9, 20, np.random.default_rng(0), "original")
        assert ((W != 0).sum(axis=1) == 3).all()

    def test_one_feature_keeps_its_coefficient(self):
        W = loda_projections(1, 5, np.random.default_rng(0))
        assert (W != 0).all()

    def test_unknown_convention(self):
        with pytest.raises(DetectorError):
            loda_projections(4, 2, np.random.default_rng(0), "dense")

    def test_sparse_projection_entries(self):
        R = sparse_projections(7, 4, np.random.default_rng(0))
        assert R.shape == (7, 4)
        assert ((R != 0).sum(axis=0) == 3).all()
        assert np.allclose(np.abs(R[R != 0]), np.sqrt(3 / 4))

    def test_ensemble_scores_zero_outside_every_histogram(self):
        ensemble = LodaEnsemble(np.array([[1.0]]), n_bins=4)
        ensemble.insert(np.array([[0.0], [1.0], [2.0]]))
        assert ensemble.score(np.array([[50.0]])).tolist() == [0.0]


class TestLODA:
    @pytest.mark.parametrize("mode", ["alternating", "continuous"])
    def test_histograms_count_every_sample(self, mode):
        stream = random_stream(192, 4, seed=0)
        loda = LODA(TUMBLING, seed=1, n_projections=10, n_bins=8, mode=mode)
        loda.train(stream.take(slice(0, 64)))
        assert loda.masses() == [64] * 10
        for k, (arriving, expired) in enumerate(slides(stream, TUMBLING, 64), start=1):
            scores = loda.process_slide(arriving, expired)
            assert scores.shape == (32,)
            assert loda.masses() == [64 + 32 * k] * 10

    @pytest.mark.parametrize("seed", range(50))
    def test_histogram_mass_on_random_streams(self, seed):
        spec, stream = _random_tumbling(seed)
        w = spec.size
        loda = LODA(spec, seed=seed, n_projections=5, n_bins=6)
        loda.train(stream.take(slice(0, w)))
        assert loda.masses() == [w] * 5
        for k, (arriving, expired) in enumerate(slides(stream, spec, w), start=1):
            loda.process_slide(arriving, expired)
            assert loda.masses() == [w * (k + 1)] * 5

    def test_far_sample_has_lowest_density(self):
        rng = np.random.default_rng(0)
        loda = LODA(TUMBLING, seed=0, n_projections=25, n_bins=10)
        loda.train(Batch.from_arrays(rng.normal(size=(128, 2))))
        window = np.vstack([rng.normal(size=(31, 2)) * 0.5, [[100.0, 100.0]]])
        scores = loda.process_slide(Batch.from_arrays(window, start=128), loda.content)
        assert scores[-1] == 0.0
        assert scores[:-1].min() > 0.0

    def test_requires_tumbling_window(self):
        with pytest.raises(DetectorError):
            LODA(WindowSpec(32, 8))

    def test_too_few_bins(self):
        with pytest.raises(DetectorError):
            LODA(TUMBLING, n_bins=1)


class TestHalfSpaceChains:
    def test_first_selection_shifts_later_ones_halve(self):
        chains = HalfSpaceChains(np.eye(2), np.array([1.0, 1.0]), np.array([[0.5, 0.3]]), np.array([[0, 0, 0]]))
        bins = chains.bin_vectors(np.array([[1.2, 7.0]]), chain=0)
        assert bins[0, :, 0].tolist() == [1, 2, 5]
        assert bins[0, :, 1].tolist() == [0, 0, 0]

    def test_build_shapes(self):
        X = np.random.default_rng(0).normal(size=(50, 6))
        chains = HalfSpaceChains.build(X, K=4, M=3, D=5, rng=np.random.default_rng(1))
        assert chains.projection.shape == (6, 4)
        assert chains.selections.shape == (3, 5)
        assert chains.shifts.shape == (3, 4)
        assert (chains.shifts <= chains.deltas).all()

    def test_constant_data_falls_back_to_unit_widths(self):
        chains = HalfSpaceChains.build(np.ones((10, 3)), K=2, M=2, D=3, rng=np.random.default_rng(0))
        assert chains.deltas.tolist() == [1.0, 1.0]

    def test_mismatched_shifts(self):
        with pytest.raises(DetectorError):
            HalfSpaceChains(np.eye(2), np.ones(2), np.zeros((2, 3)), np.zeros((1, 4)))


class TestChainScore:
    def test_minimum_over_levels(self):
        assert chain_score([3, 2, 1]) == 6.0

    def test_empty_bin_scores_zero(self):
        assert chain_score([4, 0, 9]) == 0.0


class TestXSTREAM:
    def test_reference_swaps_each_window(self):
        stream = random_stream(160, 3, seed=0)
        xs = XSTREAM(TUMBLING, seed=0, n_projections=5, n_chains=4, depth=6, exact=True)
        xs.train(stream.take(slice(0, 96)))
        assert xs.reference_totals() == [96] * 4
        for arriving, expired in slides(stream, TUMBLING, 96):
            assert xs.process_slide(arriving, expired).shape == (32,)
            assert xs.reference_totals() == [32] * 4
            assert all(c.total == 0 for c in xs.current)

    @pytest.mark.parametrize("seed", range(50))
    def test_sketch_inserts_on_random_streams(self, seed):
        spec, stream = _random_tumbling(seed)
        w = spec.size
        xs = XSTREAM(spec, seed=seed, n_projections=4, n_chains=3, depth=5)
        xs.train(stream.take(slice(0, w)))
        assert xs.reference_totals() == [w] * 3
        for arriving, expired in slides(stream, spec, w):
            xs.process_slide(arriving, expired)
            assert xs.reference_totals() == [w] * 3
            assert all(c.total == 0 for c in xs.current)

    def test_sketch_never_undercounts(self):
        stream = random_stream(128, 3, seed=1)
        sketched = XSTREAM(TUMBLING, seed=2, n_projections=5, n_chains=4, depth=6)
        exact = XSTREAM(TUMBLING, seed=2, n_projections=5, n_chains=4, depth=6, exact=True)
        sketched.train(stream.take(slice(0, 96)))
        exact.train(stream.take(slice(0, 96)))
        arriving, expired = next(slides(stream, TUMBLING, 96))
        assert (sketched.process_slide(arriving, expired) >= exact.process_slide(arriving, expired)).all()

    def test_far_sample_scores_lowest(self):
        rng = np.random.default_rng(0)
        xs = XSTREAM(TUMBLING, seed=0, n_projections=10, n_chains=10, depth=4, exact=True)
        xs.train(Batch.from_arrays(rng.normal(size=(128, 3))))
        window = np.vstack([rng.normal(size=(31, 3)) * 0.5, [[50.0, 50.0, 50.0]]])
        scores = xs.process_slide(Batch.from_arrays(window, start=128), xs.content)
        assert scores[-1] == 0.0
        assert scores[:-1].mean() > 0.0
