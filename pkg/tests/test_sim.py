import numpy as np
import pytest

from e2edet.geometry import GroundTruthSet
from e2edet.metrics import duplicate_count, evaluate
from e2edet.nms import NmsConfig
from e2edet.sim import (OracleConfig, PyramidSpec, SceneConfig, detections_for, gen_scenes,
                        gt_map, hard_3dmf_keep, mean_max_iou, oracle_predict, run_study, simulate)


def all_kept(images):
    return detections_for(images, [np.arange(len(im.preds)) for im in images])


class TestScenes:
    def test_empty(self):
        assert gen_scenes(SceneConfig(), 0) == []

    def test_same_seed_same_scenes(self):
        a, b = gen_scenes(SceneConfig(seed=4), 5), gen_scenes(SceneConfig(seed=4), 5)
        assert all(np.array_equal(x.boxes, y.boxes) and np.array_equal(x.categories, y.categories)
                   for x, y in zip(a, b))

    def test_prefix_stable(self):
        a, b = gen_scenes(SceneConfig(seed=4), 3), gen_scenes(SceneConfig(seed=4), 6)
        assert all(np.array_equal(x.boxes, y.boxes) for x, y in zip(a, b))

    def test_inside_image(self):
        for g in gen_scenes(SceneConfig(seed=2), 20):
            assert np.all(g.boxes >= 0) and np.all(g.boxes <= 512)
            assert 2 <= len(g) <= 8

    def test_crowding_target(self):
        vals = [mean_max_iou(g) for g in gen_scenes(SceneConfig(crowding=0.5, seed=0), 1000)]
        assert abs(np.mean(vals) - 0.5) <= 0.1

    def test_invalid(self):
        with pytest.raises(ValueError):
            SceneConfig(crowding=1.0)
        with pytest.raises(ValueError):
            OracleConfig(duplicates=0)
        with pytest.raises(ValueError):
            OracleConfig(decay=0.0)


class TestOracle:
    def test_single_exact_prediction_gives_ap_one(self):
        images = simulate(SceneConfig(seed=3), OracleConfig(duplicates=1, loc_noise=0.0), 30)
        d = all_kept(images)
        assert len(d) == sum(len(im.gts) for im in images)
        assert evaluate(d, gt_map(images)).mAP == 1.0

    def test_three_copies_two_duplicates_each(self):
        images = simulate(SceneConfig(seed=3), OracleConfig(duplicates=3, jitter=0.02), 30)
        g = sum(len(im.gts) for im in images)
        assert duplicate_count(all_kept(images), gt_map(images)) == 2 * g

    def test_bit_identical(self):
        gts = gen_scenes(SceneConfig(seed=1), 1)[0]
        spec = PyramidSpec()
        a, pa = oracle_predict(gts, spec, OracleConfig(seed=9), 3)
        b, pb = oracle_predict(gts, spec, OracleConfig(seed=9), 3)
        assert np.array_equal(a.scores, b.scores) and np.array_equal(a.boxes, b.boxes)
        assert all(np.array_equal(x, y) for x, y in zip(pa.levels, pb.levels))

    def test_heatmap_shapes(self):
        gts = gen_scenes(SceneConfig(seed=1), 1)[0]
        _, pyr = oracle_predict(gts, PyramidSpec(), OracleConfig(), 3)
        assert [x.shape for x in pyr.levels] == [(3, 64, 64), (3, 32, 32), (3, 16, 16),
                                                  (3, 8, 8), (3, 4, 4)]

    def test_scores_read_from_maps(self):
        gts = gen_scenes(SceneConfig(seed=1), 1)[0]
        preds, pyr = oracle_predict(gts, PyramidSpec(), OracleConfig(), 3)
        for j in range(len(preds)):
            k = int(np.argmax(preds.scores[j]))
            r, c = preds.cells[j]
            assert preds.scores[j, k] == pyr.levels[preds.levels[j]][k, r, c]

    def test_empty_scene(self):
        preds, pyr = oracle_predict(GroundTruthSet.empty(), PyramidSpec(), OracleConfig(), 2)
        assert len(preds) == 0 and all(not x.any() for x in pyr.levels)

    def test_hard_filter_on_isolated_gt(self):
        gts = GroundTruthSet(np.array([[200, 200, 260, 260.0]]), np.array([0]))
        preds, pyr = oracle_predict(gts, PyramidSpec(), OracleConfig(leak=0.0), 1)
        keep = hard_3dmf_keep(preds, pyr)
        assert len(keep) == 1 and preds.scores[keep[0]].max() == preds.scores.max()


@pytest.fixture(scope="module")
def report():
    return run_study(SceneConfig(seed=0), OracleConfig(seed=1), ["poto", "fcos"],
                     [NmsConfig()], n_images=40)


class TestStudy:
    def test_one_to_one_delta_near_zero(self, report):
        assert abs(report.row("poto")["delta_mAP"]) < 0.01
        assert report.row("poto")["kept"] <= report.row("fcos")["kept"]

    def test_one_to_many_delta_large_negative(self, report):
        assert report.row("fcos")["delta_mAP"] < -0.15

    def test_csv_header(self, report):
        assert report.to_csv().splitlines()[0].startswith("rule,assignment,nms,mAP_nms")

    def test_empty_scenes_all_zero(self):
        cfg = SceneConfig(min_instances=0, max_instances=0)
        r = run_study(cfg, OracleConfig(), ["poto", "fcos"], n_images=5)
        assert all(row["mAP_nms"] == 0 and row["mAP_raw"] == 0 and row["kept"] == 0
                   for row in r.rows)

    def test_threads_do_not_change_results(self, monkeypatch):
        a = run_study(SceneConfig(seed=5), OracleConfig(), ["poto", "atss"], n_images=12).to_csv()
        monkeypatch.setenv("E2EDET_THREADS", "4")
        b = run_study(SceneConfig(seed=5), OracleConfig(), ["poto", "atss"], n_images=12).to_csv()
        assert a == b
