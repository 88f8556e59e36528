import numpy as np
import pytest
from sklearn.base import clone

from e2edet.assign_rules import assign
from e2edet.detections import Detections
from e2edet.estimators import NMS, DetectionEvaluator, LabelAssigner, MaxFilter3D
from e2edet.geometry import GroundTruthSet, PredictionSet
from e2edet.nms import NmsConfig, greedy_nms
from e2edet.pyramid import FeaturePyramid, FilterParams, hard_3dmf, max_filter_3d

GTS = GroundTruthSet(np.array([[0, 0, 32, 32], [40, 40, 64, 64.0]]), np.array([0, 0]))


def preds():
    rng = np.random.default_rng(0)
    cells = np.array([(r, c) for r in range(8) for c in range(8)])
    loc = (cells[:, ::-1] + 0.5) * 8
    boxes = np.hstack([loc - 14, loc + 14]) + rng.normal(0, 2, (64, 4))
    return PredictionSet(rng.random((64, 1)), boxes, np.zeros(64, int), cells, np.full(64, 8.0))


def test_get_set_params_and_clone():
    est = LabelAssigner(rule="quality_topk", k=3)
    assert est.get_params()["k"] == 3
    twin = clone(est.set_params(alpha=0.5))
    assert twin.get_params() == est.get_params()


def test_assigner_matches_functional_core():
    p = preds()
    labels = LabelAssigner().fit_predict(p, GTS)
    assert np.array_equal(labels, assign("poto", GTS, p).labels)


def test_assigner_unfitted_and_bad_rule():
    with pytest.raises(ValueError, match="not fitted"):
        LabelAssigner().predict()
    with pytest.raises(ValueError):
        LabelAssigner(rule="nope").fit(preds(), GTS)
    with pytest.raises(TypeError):
        LabelAssigner().fit("not predictions", GTS)


def test_max_filter_transform():
    rng = np.random.default_rng(1)
    p = FeaturePyramid([rng.random((1, 6, 6)), rng.random((1, 3, 3))], [8, 16])
    soft = MaxFilter3D().fit().transform(p)
    hard = MaxFilter3D(hard=True).fit_transform(p)
    for a, b in zip(soft.levels, max_filter_3d(p, FilterParams()).levels):
        assert np.array_equal(a, b)
    for a, b in zip(hard.levels, hard_3dmf(p, FilterParams()).levels):
        assert np.array_equal(a, b)


def test_nms_transform():
    d = Detections(0, [[0, 0, 10, 10], [0, 0, 10, 10], [50, 50, 60, 60]], [0.9, 0.8, 0.7], 0)
    out = NMS(iou_threshold=0.5).fit_transform(d)
    assert len(out) == len(greedy_nms(d, NmsConfig(0.5))) == 2
    with pytest.raises(TypeError):
        NMS().transform([1, 2])


def test_evaluator():
    d = Detections(0, GTS.boxes, [0.9, 0.8], 0)
    ev = DetectionEvaluator().fit(None, GTS)
    assert ev.score(d) == 1.0
    assert DetectionEvaluator(interpolation="all").score(d, {0: GTS}) == 1.0
    with pytest.raises(ValueError):
        DetectionEvaluator().fit(None, None)
