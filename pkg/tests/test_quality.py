import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from e2edet.geometry import GroundTruthSet, PredictionSet
from e2edet.quality import QualityParams, fuse, quality_matrix, spatial_prior_mask

GT = GroundTruthSet(np.array([[0.0, 0.0, 100.0, 100.0]]), np.array([0]))


def at_cells(cells, scores=None, boxes=None, stride=8.0):
    n = len(cells)
    scores = np.full((n, 1), 0.5) if scores is None else np.asarray(scores, dtype=float).reshape(n, -1)
    boxes = np.tile([0.0, 0.0, 100.0, 100.0], (n, 1)) if boxes is None else np.asarray(boxes, dtype=float)
    return PredictionSet(scores, boxes, np.zeros(n), np.asarray(cells), np.full(n, stride))


class TestPrior:
    def test_global_is_all_true(self):
        p = at_cells([[0, 0], [20, 20]])
        assert spatial_prior_mask(GT, p, "global").all()

    def test_inside_box(self):
        p = at_cells([[5, 5], [20, 20]])  # centres (44, 44) and (164, 164)
        assert spatial_prior_mask(GT, p, "inside_box").tolist() == [[True, False]]

    def test_center_sampling_offset(self):
        # cell centre x = 64 + 4 = 68 is 18 px right of centre 50; 52 is 2 px
        p = at_cells([[6, 8], [6, 6]])
        assert spatial_prior_mask(GT, p, "center_sampling", 1.5).tolist() == [[False, True]]

    def test_fifteen_pixels_is_outside(self):
        # stride 10: cell (4, 6) centre is (65, 45), 15 px from the centre on x
        p = at_cells([[4, 6]], stride=10.0)
        assert not spatial_prior_mask(GT, p, "center_sampling", 1.2)[0, 0]

    def test_unknown_prior(self):
        with pytest.raises(ValueError):
            QualityParams(prior="nearby")


class TestQuality:
    def test_perfect_is_one(self):
        p = at_cells([[6, 6]], scores=[[1.0]])
        for alpha in (0.0, 0.3, 0.8, 1.0):
            assert quality_matrix(GT, p, QualityParams(alpha=alpha))[0, 0] == pytest.approx(1.0)

    def test_geometric_mean_half(self):
        assert fuse(0.5, 0.5, 0.8) == pytest.approx(0.5)

    def test_outside_prior_is_zero(self):
        p = at_cells([[30, 30]], scores=[[1.0]])
        assert quality_matrix(GT, p)[0, 0] == 0.0

    def test_uses_gt_class_score(self):
        p = at_cells([[6, 6]], scores=[[0.2, 0.9]])
        assert quality_matrix(GT, p, QualityParams(alpha=0.0))[0, 0] == pytest.approx(0.2)

    def test_degenerate_box_gives_zero(self):
        p = at_cells([[6, 6]], scores=[[0.9]], boxes=[[50, 50, 50, 50]])
        assert quality_matrix(GT, p)[0, 0] == 0.0

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_alpha_edges(self, s, o):
        assert fuse(s, o, 0.0) == s
        assert fuse(s, o, 1.0) == o

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_bounds(self, s, o, a):
        assert fuse(s, o, a) <= max(s, o) + 1e-12
        add = fuse(s, o, a, "add")
        assert min(s, o) - 1e-12 <= add <= max(s, o) + 1e-12

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5), st.sampled_from(["mul", "add"]))
    def test_monotone(self, s, o, a, d, fusion):
        base = fuse(s, o, a, fusion)
        assert fuse(min(s + d, 1), o, a, fusion) >= base - 1e-12
        assert fuse(s, min(o + d, 1), a, fusion) >= base - 1e-12

    def test_matrix_in_unit_interval(self):
        rng = np.random.default_rng(0)
        p = at_cells(rng.integers(0, 14, (30, 2)), scores=rng.random((30, 1)),
                     boxes=np.sort(rng.uniform(0, 120, (30, 4)).reshape(30, 2, 2), axis=1)
                     .transpose(0, 2, 1).reshape(30, 4))
        q = quality_matrix(GT, p)
        assert q.shape == (1, 30) and np.all((q >= 0) & (q <= 1))
