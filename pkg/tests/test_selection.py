"""Tests for binned top-k selection and the coverage metrics.

The independent oracle for per-bin selection is a sorted() call over
(score, index) pairs, nothing shared with the implementation.
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evscore.io import AnnotationRecord
from evscore.selection import (
    Selection,
    SelectionConfig,
    bin_partition,
    coverage,
    coverage_rate,
    load_selections,
    save_selections,
    select,
    uniform_select,
)

score_vectors = st.lists(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
    min_size=1,
    max_size=64,
)

# Sixteenths stay exactly representable under the shifts and scales used
# by the invariance tests, so reordering can only come from the selector,
# never from float rounding collapsing two distinct scores into a tie.
grid_score_vectors = st.lists(
    st.integers(min_value=-1600, max_value=1600).map(lambda k: k / 16.0),
    min_size=1,
    max_size=64,
)


def oracle_top_k(scores, k):
    """Highest k scores, ties to the lower index: sort by (-score, index)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(order[:k])


class TestBinPartition:
    def test_remainder_goes_to_front(self):
        assert [(r.start, r.stop) for r in bin_partition(10, 3)] == [
            (0, 4),
            (4, 7),
            (7, 10),
        ]

    def test_singletons(self):
        assert [(r.start, r.stop) for r in bin_partition(8, 8)] == [
            (i, i + 1) for i in range(8)
        ]

    def test_seven_over_two(self):
        assert [(r.start, r.stop) for r in bin_partition(7, 2)] == [(0, 4), (4, 7)]

    def test_more_bins_than_frames_rejected(self):
        with pytest.raises(ValueError):
            bin_partition(3, 4)

    @given(st.integers(min_value=1, max_value=200), st.integers(min_value=1, max_value=200))
    def test_partition_properties(self, n, bins):
        if bins > n:
            return
        ranges = bin_partition(n, bins)
        assert ranges[0].start == 0 and ranges[-1].stop == n
        sizes = [len(r) for r in ranges]
        assert max(sizes) - min(sizes) <= 1
        assert sorted(sizes, reverse=True) == sizes
        for a, b in zip(ranges, ranges[1:]):
            assert a.stop == b.start


class TestSelect:
    def test_per_bin_argmax(self):
        sel = select(np.array([3.0, 1.0, 2.0, 5.0]), SelectionConfig(2, 1))
        assert sel.indices.tolist() == [0, 3]
        assert sel.scores.tolist() == [3.0, 5.0]

    def test_global_top_m(self):
        sel = select(np.array([0.9, 0.1, 0.5, 0.7]), SelectionConfig(1, 2))
        assert sel.indices.tolist() == [0, 3]

    def test_ties_take_lowest_index(self):
        sel = select(np.zeros(4), SelectionConfig(2, 1))
        assert sel.indices.tolist() == [0, 2]

    def test_small_bin_taken_whole(self):
        sel = select(np.arange(5.0), SelectionConfig(2, 4))
        assert sel.indices.tolist() == [0, 1, 2, 3, 4]

    def test_too_many_bins_rejected(self):
        with pytest.raises(ValueError):
            select(np.ones(3), SelectionConfig(4, 1))

    @given(score_vectors, st.integers(min_value=1, max_value=16))
    def test_single_bin_matches_sort_oracle(self, scores, m):
        sel = select(np.array(scores), SelectionConfig(1, m))
        assert sel.indices.tolist() == oracle_top_k(scores, min(m, len(scores)))

    @given(score_vectors)
    def test_one_per_bin_emits_one_per_bin(self, scores):
        n = len(scores)
        bins = max(1, n // 2)
        sel = select(np.array(scores), SelectionConfig(bins, 1))
        assert sel.indices.size == bins
        for r, idx in zip(bin_partition(n, bins), sel.indices):
            assert r.start <= idx < r.stop

    @given(grid_score_vectors, st.integers(min_value=-100, max_value=100))
    def test_shift_invariance(self, scores, c):
        cfg = SelectionConfig(1, 3)
        a = select(np.array(scores), cfg).indices
        b = select(np.array(scores) + float(c), cfg).indices
        np.testing.assert_array_equal(a, b)

    @given(grid_score_vectors, st.integers(min_value=-3, max_value=6))
    def test_positive_scale_invariance(self, scores, log2_alpha):
        cfg = SelectionConfig(1, 3)
        a = select(np.array(scores), cfg).indices
        b = select(np.array(scores) * 2.0**log2_alpha, cfg).indices
        np.testing.assert_array_equal(a, b)

    @given(score_vectors, st.integers(min_value=1, max_value=8), st.integers(min_value=1, max_value=8))
    def test_decomposes_over_bins(self, scores, bins, k):
        if bins > len(scores):
            return
        scores = np.array(scores)
        whole = select(scores, SelectionConfig(bins, k)).indices.tolist()
        stitched = []
        for r in bin_partition(len(scores), bins):
            local = select(scores[r.start : r.stop], SelectionConfig(1, k)).indices
            stitched.extend((local + r.start).tolist())
        assert whole == sorted(stitched)

    @given(score_vectors, st.integers(min_value=1, max_value=8), st.integers(min_value=1, max_value=8))
    def test_output_invariants(self, scores, bins, k):
        if bins > len(scores):
            return
        sel = select(np.array(scores), SelectionConfig(bins, k))
        idx = sel.indices
        assert np.all(np.diff(idx) > 0)
        assert idx.size <= bins * k and idx.size <= len(scores)
        assert np.all((0 <= idx) & (idx < len(scores)))


class TestUniformSelect:
    def test_even_spacing(self):
        assert uniform_select(10, 5).indices.tolist() == [0, 2, 4, 6, 8]

    def test_budget_at_least_n_gives_all(self):
        assert uniform_select(4, 9).indices.tolist() == [0, 1, 2, 3]

    def test_floor_rule(self):
        assert uniform_select(7, 3).indices.tolist() == [0, 2, 4]

    def test_no_scores_attached(self):
        assert uniform_select(5, 2).scores is None

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            uniform_select(0, 3)
        with pytest.raises(ValueError):
            uniform_select(3, 0)


class TestCoverage:
    def test_hit_inside_segment(self):
        sel = Selection(indices=[5])
        assert coverage(sel, [(4, 6)], fps=1.0) is True

    def test_no_segments_no_coverage(self):
        assert coverage(Selection(indices=[0, 1]), [], fps=1.0) is False

    def test_miss(self):
        sel = Selection(indices=[0, 10])
        assert coverage(sel, [(3, 7)], fps=1.0) is False

    def test_fps_converts_index_to_seconds(self):
        # Frame 10 at 2 fps sits at t = 5 s.
        sel = Selection(indices=[10])
        assert coverage(sel, [(4.5, 5.5)], fps=2.0) is True
        assert coverage(sel, [(9.5, 10.5)], fps=2.0) is False

    def test_boundary_inclusive(self):
        assert coverage(Selection(indices=[4]), [(4, 6)], fps=1.0) is True
        assert coverage(Selection(indices=[6]), [(4, 6)], fps=1.0) is True

    def test_empty_selection(self):
        assert coverage(Selection(indices=[]), [(0, 100)], fps=1.0) is False


def _record(segments, fps=1.0):
    return AnnotationRecord("q", "v", fps, 100, segments)


class TestCoverageRate:
    def test_all_covered(self):
        sels = [Selection(indices=[5]), Selection(indices=[50])]
        recs = [_record([(4, 6)]), _record([(49, 51)])]
        assert coverage_rate(sels, recs) == 1.0

    def test_none_covered(self):
        sels = [Selection(indices=[5]), Selection(indices=[50])]
        recs = [_record([(90, 95)]), _record([(0, 3)])]
        assert coverage_rate(sels, recs) == 0.0

    def test_half(self):
        sels = [Selection(indices=[5]), Selection(indices=[50])]
        recs = [_record([(4, 6)]), _record([(0, 3)])]
        assert coverage_rate(sels, recs) == 0.5

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            coverage_rate([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            coverage_rate([Selection(indices=[0])], [])


class TestSelectionInvariantsAndFiles:
    def test_unsorted_indices_rejected(self):
        with pytest.raises(ValueError):
            Selection(indices=[3, 1])

    def test_duplicate_indices_rejected(self):
        with pytest.raises(ValueError):
            Selection(indices=[1, 1])

    def test_score_alignment_enforced(self):
        with pytest.raises(ValueError):
            Selection(indices=[0, 1], scores=[0.5])

    def test_round_trip(self, tmp_path):
        sels = [
            Selection(indices=[0, 4, 7], scores=[0.5, 0.25, -1.0], query_id="a"),
            Selection(indices=[2], scores=None, query_id="b"),
        ]
        path = tmp_path / "sel.jsonl"
        save_selections(path, sels)
        back = load_selections(path)
        assert len(back) == 2
        np.testing.assert_array_equal(back[0].indices, sels[0].indices)
        np.testing.assert_array_equal(back[0].scores, sels[0].scores)
        assert back[1].scores is None
        assert back[1].query_id == "b"
