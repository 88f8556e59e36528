import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from e2edet.detections import Detections
from e2edet.geometry import GroundTruthSet
from e2edet.nms import STUDY_CONFIGS, NmsConfig, format_float, greedy_nms, nms_study, rows_to_csv
from oracles import nms_quadratic


def dets(boxes, scores, cats=0, levels=None, cells=None, strides=8.0):
    return Detections(0, np.array(boxes, dtype=float), np.array(scores, dtype=float), cats,
                      levels, cells, strides)


def test_identical_pair():
    d = dets([[0, 0, 10, 10], [0, 0, 10, 10]], [0.9, 0.8])
    assert greedy_nms(d, NmsConfig(0.6)).tolist() == [0]


def test_classwise():
    d = Detections(0, [[0, 0, 10, 10]] * 2, [0.9, 0.8], [0, 1])
    assert sorted(greedy_nms(d).tolist()) == [0, 1]


def test_window_one_keeps_neighbours():
    d = dets([[0, 0, 20, 20], [1, 0, 21, 20]], [0.9, 0.8], cells=[[0, 0], [0, 1]])
    assert sorted(greedy_nms(d, NmsConfig(spatial_range=1)).tolist()) == [0, 1]
    assert greedy_nms(d, NmsConfig(spatial_range=3)).tolist() == [0]


def test_per_scale_keeps_other_level():
    d = dets([[0, 0, 20, 20]] * 2, [0.9, 0.8], levels=[0, 1], strides=[8, 16])
    assert sorted(greedy_nms(d, NmsConfig(across_scales=False)).tolist()) == [0, 1]
    assert greedy_nms(d, NmsConfig(across_scales=True)).tolist() == [0]


def test_score_floor():
    d = dets([[0, 0, 1, 1], [5, 5, 6, 6]], [0.5, 0.01])
    assert greedy_nms(d).tolist() == [0]


def test_threshold_strict():
    # IoU exactly 0.5 is not above a 0.5 threshold
    d = dets([[0, 0, 2, 1], [0, 0, 1, 1]], [0.9, 0.8])
    assert sorted(greedy_nms(d, NmsConfig(0.5)).tolist()) == [0, 1]


def test_invalid_config():
    with pytest.raises(ValueError):
        NmsConfig(spatial_range=2)
    with pytest.raises(ValueError):
        NmsConfig(iou_threshold=0.0)


def test_config_ids():
    assert [c.config_id for c in STUDY_CONFIGS] == [
        "per_scale_1x1", "per_scale_3x3", "per_scale_5x5", "per_scale_inf", "across_inf"]


def _random(seed, n=10, levels=2):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 40, (n, 2))
    wh = rng.uniform(5, 30, (n, 2))
    lv = rng.integers(0, levels, n)
    strides = 8.0 * 2.0 ** lv
    cells = np.stack([(xy[:, 1] + wh[:, 1] / 2) // strides,
                      (xy[:, 0] + wh[:, 0] / 2) // strides], axis=1).astype(int)
    scores = np.round(rng.uniform(0.06, 1, n), 1)  # coarse, so ties happen
    cats = rng.integers(0, 2, n)
    return Detections(0, np.hstack([xy, xy + wh]), scores, cats, lv, cells, strides)


@given(st.integers(0, 10_000), st.sampled_from([0.3, 0.5, 0.6]),
       st.booleans(), st.sampled_from([None, 1, 3, 5]))
def test_matches_quadratic_reference(seed, thr, across, window):
    d = _random(seed)
    got = sorted(greedy_nms(d, NmsConfig(thr, across, window, 0.0)).tolist())
    want = nms_quadratic(d.boxes.tolist(), d.scores.tolist(), d.categories.tolist(),
                         d.levels.tolist(), d.cells.tolist(), d.strides.tolist(), thr,
                         across, window)
    assert got == want


@given(st.integers(0, 10_000))
def test_keep_count_monotone(seed):
    d = _random(seed, n=25, levels=3)
    counts = [len(greedy_nms(d, c)) for c in STUDY_CONFIGS]
    assert counts == sorted(counts, reverse=True)


@given(st.integers(0, 10_000))
def test_idempotent(seed):
    d = _random(seed)
    once = d.select(np.sort(greedy_nms(d)))
    assert len(greedy_nms(once)) == len(once)


def test_study_trivial_rows():
    gts = GroundTruthSet(np.array([[0, 0, 10, 10.0]]), np.array([0]))
    rows = nms_study(Detections.empty(), gts)
    assert all(r["AP"] == 0.0 for r in rows)
    rows = nms_study(dets([[0, 0, 10, 10]], [0.9]), gts)
    assert all(r["AP"] == 1.0 and r["AP50"] == 1.0 for r in rows)
    text = rows_to_csv(rows, ["config_id", "AP"])
    assert text.splitlines()[1] == "per_scale_1x1,1.000000"


def test_format_float():
    assert format_float(True) == "true"
    assert format_float(0.5) == "0.500000"
    assert format_float(float("nan")) == "nan"
    assert format_float(3) == "3"
