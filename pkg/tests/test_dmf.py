import numpy as np
import pytest

from e2edet.dmf import (DmfWeights, default_groups, dmf_backward, dmf_forward, group_norm,
                        sigmoid)
from e2edet.gradcheck import check_dmf_gradients, relative_error
from e2edet.pyramid import FeaturePyramid, FilterParams, max_filter_3d
from oracles import dmf_loop


def pyr(levels):
    return FeaturePyramid(levels, [8.0 * 2 ** i for i in range(len(levels))])


def small_problem(seed=0, channels=4, classes=2, shapes=((6, 6), (3, 3))):
    rng = np.random.default_rng(seed)
    feats = pyr([rng.normal(size=(channels,) + s) for s in shapes])
    logits = pyr([rng.normal(size=(classes,) + s) for s in shapes])
    return feats, logits


def test_default_groups():
    assert default_groups(256) == 32
    assert default_groups(4) == 4
    assert default_groups(48) == 24


def test_weight_shapes_checked():
    w = DmfWeights.zeros(4)
    with pytest.raises(ValueError):
        w.replace(conv2_w=np.zeros((1, 3, 3, 3)))


def test_channel_mismatch_rejected():
    feats, logits = small_problem(channels=4)
    with pytest.raises(ValueError):
        dmf_forward(feats, logits, DmfWeights.zeros(2))


def test_zero_weights_halve_the_coarse_scores():
    feats, logits = small_problem()
    out = dmf_forward(feats, logits, DmfWeights.zeros(4))
    for o, z in zip(out.levels, logits.levels):
        assert np.allclose(o, 0.5 * sigmoid(z), atol=1e-15)


def test_identity_wiring_matches_composed_primitives():
    c = 2
    feats, logits = small_problem(seed=4, channels=c)
    w = DmfWeights.zeros(c, groups=1)
    conv1 = np.zeros((c, c, 3, 3))
    for k in range(c):
        conv1[k, k, 1, 1] = 1.0
    conv2 = np.zeros((1, c, 3, 3))
    conv2[0, 0, 1, 1] = 1.0
    w = w.replace(conv1_w=conv1, conv2_w=conv2)
    out = dmf_forward(feats, logits, w)
    hidden = pyr([group_norm(x, np.ones(c), np.zeros(c), 1)[0] for x in feats.levels])
    maxed = max_filter_3d(hidden, FilterParams())
    for o, x, m, z in zip(out.levels, feats.levels, maxed.levels, logits.levels):
        assert np.allclose(o, sigmoid(z) * sigmoid(x[0] + m[0]), atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forward_matches_loop_reference(seed):
    feats, logits = small_problem(seed, channels=4, shapes=((5, 5), (3, 3), (2, 2)))
    w = DmfWeights.random(4, seed=seed, groups=2)
    got = dmf_forward(feats, logits, w)
    want = dmf_loop(feats.levels, logits.levels, w, 2, 3)
    for a, b in zip(got.levels, want):
        assert np.allclose(a, b, atol=1e-6, rtol=0)


def test_zero_upstream_gives_zero_gradients():
    feats, logits = small_problem()
    w = DmfWeights.random(4, seed=0, groups=2)
    g = dmf_backward(feats, logits, w, [np.zeros_like(z) for z in logits.levels])
    assert all(not np.any(x) for x in g.features + g.logits)
    assert all(not np.any(v) for v in g.weights.values())


def test_scalar_chain_rule():
    # one level, one cell, one channel: the norm collapses h to beta
    x, z, beta, w2, b2 = 0.3, -0.4, 0.7, 1.3, 0.2
    feats = pyr([np.full((1, 1, 1), x)])
    logits = pyr([np.full((1, 1, 1), z)])
    conv2 = np.zeros((1, 1, 3, 3))
    conv2[0, 0, 1, 1] = w2
    w = DmfWeights.zeros(1, groups=1, filter=FilterParams(0, 1)).replace(
        gn_beta=np.array([beta]), conv2_w=conv2, conv2_b=np.array([b2]))
    u = w2 * (x + beta) + b2
    su, sz = 1 / (1 + np.exp(-u)), 1 / (1 + np.exp(-z))
    out = dmf_forward(feats, logits, w).levels[0].item()
    assert out == pytest.approx(sz * su, rel=1e-12)
    g = dmf_backward(feats, logits, w, [np.ones((1, 1, 1))])
    assert g.features[0].item() == pytest.approx(sz * su * (1 - su) * w2, rel=1e-9)
    assert g.logits[0].item() == pytest.approx(sz * (1 - sz) * su, rel=1e-9)
    assert g.weights["gn_beta"].item() == pytest.approx(sz * su * (1 - su) * w2, rel=1e-9)
    assert g.weights["conv2_b"].item() == pytest.approx(sz * su * (1 - su), rel=1e-9)
    assert g.weights["conv2_w"][0, 0, 1, 1] == pytest.approx(sz * su * (1 - su) * (x + beta), rel=1e-9)
    assert g.weights["gn_gamma"].item() == pytest.approx(0.0, abs=1e-12)


def test_relative_error_floor():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2e-4, 1e-4) == pytest.approx(1e-4 / 1e-2)
    assert relative_error(-3.0, -3.0003) == pytest.approx(1e-4, rel=1e-3)


def test_finite_differences_small():
    report = check_dmf_gradients(seed=5, shapes=((4, 4), (2, 2)), channels=2, classes=1)
    assert report.passed, "\n".join(report.lines())
    assert report.checked > 100


def test_tied_inputs_are_skipped():
    x = np.zeros((1, 1, 4, 4))
    x[0, 0, 1, 1] = x[0, 0, 1, 2] = 1.0  # two equal maxima side by side
    feats = pyr([x[0]])
    logits = pyr([np.zeros((1, 4, 4))])
    conv1 = np.zeros((1, 1, 3, 3))
    conv1[0, 0, 1, 1] = 1.0
    conv2 = np.full((1, 1, 3, 3), 0.1)
    w = DmfWeights.zeros(1, groups=1, filter=FilterParams(0, 3)).replace(conv1_w=conv1,
                                                                         conv2_w=conv2)
    upstream = [np.random.default_rng(0).normal(size=(1, 4, 4))]
    report = check_dmf_gradients(problem=(feats, logits, w, upstream))
    assert report.skipped > 0
    assert report.passed


def test_gradcheck_is_deterministic():
    a = check_dmf_gradients(seed=3, shapes=((3, 3), (2, 2)), channels=2, classes=1)
    b = check_dmf_gradients(seed=3, shapes=((3, 3), (2, 2)), channels=2, classes=1)
    assert a.lines() == b.lines()
