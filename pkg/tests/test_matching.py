import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from e2edet.geometry import GroundTruthSet, PredictionSet
from e2edet.losses import foreground_cost
from e2edet.matching import brute_force_match, hungarian_max, loss_cost_match
from oracles import best_assignment_value


@st.composite
def quality_matrices(draw, max_g=5, max_n=7, discrete=False):
    g = draw(st.integers(1, max_g))
    n = draw(st.integers(g, max_n))
    elems = st.sampled_from([0.0, 0.25, 0.5, 1.0]) if discrete else st.floats(0, 1)
    return draw(arrays(np.float64, (g, n), elements=elems))


class TestHungarian:
    def test_two_by_two(self):
        a = hungarian_max([[0.9, 0.1], [0.2, 0.8]])
        assert a.pairs == [(0, 0), (1, 1)]
        assert a.objective == pytest.approx(1.7)

    def test_single_row_takes_argmax(self):
        assert hungarian_max([[0.1, 0.7, 0.3]]).pairs == [(0, 1)]

    def test_more_rows_than_columns(self):
        with pytest.raises(ValueError):
            hungarian_max(np.ones((3, 2)))

    def test_zero_rows_reported_unmatched(self):
        a = hungarian_max([[0.5, 0.0], [0.0, 0.0]])
        assert a.pairs == [(0, 0)] and a.unmatched == [1]

    def test_all_ones_diagonal(self):
        assert hungarian_max(np.ones((3, 5))).pairs == [(0, 0), (1, 1), (2, 2)]

    @given(quality_matrices())
    def test_objective_matches_exhaustive(self, q):
        a = hungarian_max(q)
        assert a.objective == pytest.approx(best_assignment_value(q), abs=1e-12)
        assert len(set(a.pred_indices)) == len(a.pairs)

    @given(quality_matrices(discrete=True))
    def test_ties_break_lexicographically(self, q):
        a, b = hungarian_max(q), brute_force_match(q)
        assert a.pairs == b.pairs
        assert a.objective == b.objective

    @given(quality_matrices(), st.floats(0.1, 10))
    def test_scale_invariance(self, q, c):
        assert hungarian_max(q).pairs == hungarian_max(q * c).pairs


class TestBruteForce:
    def test_scalar(self):
        a = brute_force_match([[0.5]])
        assert a.pairs == [(0, 0)] and a.objective == 0.5

    def test_identity_dominant(self):
        assert brute_force_match(np.eye(2) + 0.1).pairs == [(0, 0), (1, 1)]

    def test_three_by_five_enumeration(self):
        q = np.random.default_rng(7).random((3, 5))
        assert brute_force_match(q).objective == pytest.approx(best_assignment_value(q))

    def test_cap(self):
        with pytest.raises(ValueError):
            brute_force_match(np.ones((2, 10)))


def _preds(scores, boxes):
    n = len(boxes)
    return PredictionSet(np.asarray(scores, dtype=float), np.asarray(boxes, dtype=float),
                         np.zeros(n), np.zeros((n, 2)), np.full(n, 8.0))


class TestLossCost:
    def test_perfect_column_chosen(self):
        gts = GroundTruthSet(np.array([[0.0, 0, 10, 10]]), np.array([0]))
        p = _preds([[0.3], [0.99], [0.5]], [[2, 2, 9, 9], [0, 0, 10, 10], [5, 5, 20, 20]])
        assert loss_cost_match(gts, p).pairs == [(0, 1)]

    def test_tiny_case_against_enumeration(self):
        gts = GroundTruthSet(np.array([[0.0, 0, 10, 10], [20, 20, 30, 30]]), np.array([0, 1]))
        p = _preds([[0.8, 0.1], [0.2, 0.7], [0.5, 0.5]],
                   [[1, 1, 10, 10], [19, 21, 30, 31], [0, 0, 30, 30]])
        cost = foreground_cost(gts, p)
        a = loss_cost_match(gts, p)
        assert a.objective == pytest.approx(-best_assignment_value(-cost))

    def test_identical_predictions_pick_smallest_indices(self):
        gts = GroundTruthSet(np.array([[0.0, 0, 10, 10], [0, 0, 10, 10]]), np.array([0, 0]))
        p = _preds([[0.5]] * 4, [[0, 0, 10, 10]] * 4)
        assert loss_cost_match(gts, p).pairs == [(0, 0), (1, 1)]
