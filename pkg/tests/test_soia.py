"""
Tests for object-instance association and the SOIA distance.
"""

import itertools

import numpy as np
import pytest

from conftest import make_clip, random_clip
from drive_sscl.core.soia import (
    SoiaCache,
    associate,
    distance_matrix,
    hungarian_max,
    instance_similarity,
    iou,
    margin_count,
    select_pos_neg,
    similarity_matrix,
    soia_distance,
)
from drive_sscl.exceptions import ArgumentError, ConfigurationError
from drive_sscl.models import BoundingBox


def _brute_force_max(matrix):
    n_rows, n_cols = matrix.shape
    if n_rows <= n_cols:
        return max(
            sum(matrix[r, c] for r, c in zip(range(n_rows), cols))
            for cols in itertools.permutations(range(n_cols), n_rows)
        )
    return _brute_force_max(matrix.T)


class TestIou:
    """Tests for box IoU."""

    def test_identical(self):
        """Test a box overlaps itself completely."""
        box = BoundingBox(x_min=1, y_min=2, width=3, height=4)
        assert iou(box, box) == pytest.approx(1.0)

    def test_disjoint(self):
        """Test disjoint boxes give zero."""
        a = BoundingBox(x_min=0, y_min=0, width=1, height=1)
        b = BoundingBox(x_min=5, y_min=5, width=1, height=1)
        assert iou(a, b) == 0.0

    def test_partial(self):
        """Test a 2x2 box against a 3x2 box shifted by 0.75."""
        a = BoundingBox(x_min=0, y_min=0, width=2, height=2)
        b = BoundingBox(x_min=0.75, y_min=0, width=3, height=2)
        assert iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)


class TestHungarian:
    """Tests for the maximum-similarity assignment."""

    def test_matches_brute_force(self):
        """Test the optimum against exhaustive search on random matrices."""
        rng = np.random.default_rng(7)
        for _ in range(200):
            shape = tuple(int(s) for s in rng.integers(1, 8, size=2))
            matrix = rng.random(shape)
            result = hungarian_max(matrix, prune_zero=False)
            assert result.total == pytest.approx(_brute_force_max(matrix), abs=1e-9)
            assert len(result.matches) == min(shape)

    def test_one_to_one(self):
        """Test no row or column is used twice."""
        matrix = np.random.default_rng(1).random((5, 3))
        result = hungarian_max(matrix)
        rows = [r for r, _ in result.matches]
        cols = [c for _, c in result.matches]
        assert len(set(rows)) == len(rows)
        assert len(set(cols)) == len(cols)
        assert sorted(rows + result.unmatched_rows) == list(range(5))

    def test_zero_pairs_pruned(self):
        """Test zero-similarity pairs are reported unmatched."""
        result = hungarian_max(np.array([[0.5, 0.0], [0.0, 0.0]]), row_ids=[10, 11], col_ids=[20, 21])
        assert result.matches == [(10, 20)]
        assert result.unmatched_rows == [11]
        assert result.unmatched_cols == [21]

    def test_empty_side(self):
        """Test an empty side leaves everything unmatched."""
        result = hungarian_max(np.zeros((0, 3)))
        assert result.matches == []
        assert result.unmatched_cols == [0, 1, 2]

    def test_non_finite_rejected(self):
        """Test NaN similarities are an argument error."""
        with pytest.raises(ArgumentError):
            hungarian_max(np.array([[np.nan]]))


class TestSimilarity:
    """Tests for instance mIoU."""

    def test_absent_frames_count_zero(self):
        """Test frames where either instance is missing add zero to the mean."""
        a = make_clip([(0, 1, 2, 0, 0, 10, 10), (1, 1, 2, 0, 0, 10, 10)], num_frames=4, clip_id="a")
        b = make_clip([(0, 5, 2, 0, 0, 10, 10)], num_frames=4, clip_id="b")
        assert instance_similarity(a, b, 1, 5) == pytest.approx(0.25)
        sim = similarity_matrix(a, b)
        assert sim.values.shape == (1, 1)
        assert list(sim.row_ids) == [1]
        assert list(sim.col_ids) == [5]

    def test_associate_recovers_identity(self):
        """Test renumbered instances are matched back."""
        rows = [(t, i, 2, 40.0 * i, 10.0, 20.0, 20.0) for t in range(3) for i in range(3)]
        a = make_clip(rows, num_frames=3, clip_id="a")
        b = make_clip([(t, i + 100, c, x, y, w, h) for t, i, c, x, y, w, h in rows], num_frames=3, clip_id="b")
        assert sorted(associate(a, b).matches) == [(0, 100), (1, 101), (2, 102)]

    def test_length_mismatch(self):
        """Test clips of different length are rejected."""
        with pytest.raises(ArgumentError):
            similarity_matrix(make_clip([], num_frames=3), make_clip([], num_frames=4))


class TestSoiaDistance:
    """Tests for soia_distance."""

    def test_identical_clips(self, two_car_clip):
        """Test a clip is at distance zero from itself."""
        other = two_car_clip.model_copy(update={"clip_id": "copy"})
        assert soia_distance(two_car_clip, other) == 0.0

    def test_one_against_empty(self):
        """Test a 10x10 instance on every frame against an empty clip."""
        a = make_clip([(t, 1, 2, 0, 0, 10, 10) for t in range(5)], num_frames=5, clip_id="a")
        b = make_clip([], num_frames=5, clip_id="b")
        assert soia_distance(a, b) == pytest.approx(100.0)

    def test_disjoint_instances_both_unmatched(self):
        """Test non-overlapping instances contribute both areas."""
        a = make_clip([(0, 1, 2, 0, 0, 10, 10)], num_frames=1, clip_id="a")
        b = make_clip([(0, 1, 2, 50, 50, 10, 10)], num_frames=1, clip_id="b")
        assert soia_distance(a, b) == pytest.approx(200.0)

    def test_partial_overlap(self):
        """Test IoU 1/3 with areas 4 and 6 gives distance 4."""
        a = make_clip([(0, 1, 2, 0.0, 0.0, 2.0, 2.0)], num_frames=1, clip_id="a")
        b = make_clip([(0, 1, 2, 0.75, 0.0, 3.0, 2.0)], num_frames=1, clip_id="b")
        assert soia_distance(a, b) == pytest.approx(4.0, abs=1e-12)

    def test_properties(self, rng):
        """Test non-negativity, identity and symmetry on 500 random pairs."""
        for k in range(500):
            a = random_clip(rng, max_instances=4, num_frames=4, clip_id=f"a{k}")
            b = random_clip(rng, max_instances=4, num_frames=4, clip_id=f"b{k}")
            d = soia_distance(a, b)
            assert d >= 0.0
            assert d == pytest.approx(soia_distance(b, a), rel=1e-9, abs=0.0)
            twin = a.model_copy(update={"clip_id": f"a{k}-copy"})
            assert soia_distance(a, twin) == pytest.approx(0.0, abs=1e-9)


class TestDistanceMatrix:
    """Tests for distance_matrix and SoiaCache."""

    def test_matches_pairwise(self, rng):
        """Test each entry equals the pairwise distance."""
        clips = [random_clip(rng, clip_id=f"c{k}") for k in range(5)]
        result = distance_matrix(clips)
        assert result.clip_ids == [c.clip_id for c in clips]
        assert np.all(np.diag(result.values) == 0.0)
        for i, j in itertools.combinations(range(5), 2):
            assert result.values[i, j] == soia_distance(clips[i], clips[j])
            assert result.values[j, i] == result.values[i, j]

    def test_threads_do_not_change_values(self, rng):
        """Test threaded evaluation is bit-identical."""
        clips = [random_clip(rng, clip_id=f"c{k}") for k in range(6)]
        assert np.array_equal(distance_matrix(clips, threads=1).values, distance_matrix(clips, threads=4).values)

    def test_mixed_lengths_rejected(self):
        """Test clips of different lengths are an argument error."""
        with pytest.raises(ArgumentError):
            distance_matrix([make_clip([], num_frames=2, clip_id="a"), make_clip([], num_frames=3, clip_id="b")])

    def test_cache_memoizes(self, rng):
        """Test the cache stores one value per unordered pair."""
        clips = [random_clip(rng, clip_id=f"c{k}") for k in range(4)]
        cache = SoiaCache()
        first = cache.matrix(clips, threads=2)
        assert len(cache) == 6
        assert np.array_equal(first, cache.matrix(list(reversed(clips)))[::-1, ::-1])
        assert len(cache) == 6


class TestSelectPosNeg:
    """Tests for positive and negative selection."""

    def test_margin_count(self):
        """Test the withheld count is max(1, floor(alpha*B))."""
        assert margin_count(8, 0.25) == 2
        assert margin_count(8, 0.0) == 1
        assert margin_count(4, 0.1) == 1

    def test_batch_of_eight(self):
        """Test B=8 and alpha=0.25 leave five negatives."""
        distances = np.array([0.0, 5.0, 1.0, 7.0, 3.0, 2.0, 6.0, 4.0])
        positive, negatives = select_pos_neg(0, distances, margin_fraction=0.25)
        assert positive == 2
        assert len(negatives) == 5
        assert negatives == [1, 3, 4, 6, 7]

    def test_ties_prefer_lower_index(self):
        """Test equal distances resolve to the lower batch index."""
        positive, _ = select_pos_neg(1, np.array([2.0, 0.0, 2.0, 9.0]), margin_fraction=0.0)
        assert positive == 0

    def test_margin_too_large(self):
        """Test a margin that leaves no negatives is a configuration error."""
        with pytest.raises(ConfigurationError):
            select_pos_neg(0, np.zeros(4), margin_fraction=0.75)

    def test_batch_too_small(self):
        """Test a batch of one is a configuration error."""
        with pytest.raises(ConfigurationError):
            margin_count(1, 0.25)
