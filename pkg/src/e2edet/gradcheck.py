"""Central-difference verification of the 3D max filtering module's gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .dmf import DmfWeights, dmf_backward, dmf_forward
from .pyramid import FeaturePyramid, FilterParams, max_filter_3d_with_argmax

# errors are relative to max(|analytic|, |numeric|, SCALE_FLOOR)
SCALE_FLOOR = 1e-2


@dataclass
class GradcheckReport:
    seed: int
    step: float
    tolerance: float
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    per_tensor: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < self.tolerance

    def lines(self) -> List[str]:
        out = [f"seed={self.seed} step={self.step:g} tolerance={self.tolerance:g}"]
        for name, err in self.per_tensor.items():
            out.append(f"  {name:<10} max_rel_error={err:.3e}")
        out.append(f"checked={self.checked} skipped_ties={self.skipped} "
                   f"max_rel_error={self.max_rel_error:.3e} "
                   f"{'PASS' if self.passed else 'FAIL'}")
        return out


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), SCALE_FLOOR)


def random_problem(seed: int, shapes: Sequence[Tuple[int, int]], channels: int = 4,
                   classes: int = 2, filter: FilterParams = FilterParams()):
    rng = np.random.default_rng(seed)
    strides = [8.0 * 2 ** i for i in range(len(shapes))]
    feats = FeaturePyramid([rng.normal(size=(channels,) + tuple(s)) for s in shapes], strides)
    logits = FeaturePyramid([rng.normal(size=(classes,) + tuple(s)) for s in shapes], strides)
    weights = DmfWeights.random(channels, seed=seed + 1, groups=min(2, channels), filter=filter)
    upstream = [rng.normal(size=(classes,) + tuple(s)) for s in shapes]
    return feats, logits, weights, upstream


def _argmax_signature(features: FeaturePyramid, weights: DmfWeights):
    from .dmf import conv3x3, group_norm
    hidden = []
    for x in features.levels:
        a, _ = conv3x3(x, weights.conv1_w, weights.conv1_b)
        h, _ = group_norm(a, weights.gn_gamma, weights.gn_beta, weights.groups)
        hidden.append(h)
    _, records = max_filter_3d_with_argmax(FeaturePyramid(hidden, features.strides), weights.filter)
    return [arg for _, arg in records]


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_dmf_gradients(seed: int = 0, shapes: Sequence[Tuple[int, int]] = ((8, 8), (4, 4), (2, 2)),
                        channels: int = 4, classes: int = 2, step: float = 1e-3,
                        tolerance: float = 1e-4, filter: FilterParams = FilterParams(),
                        problem=None) -> GradcheckReport:
    """Compare every analytic gradient entry with a central difference.

    The objective is ``sum(out * upstream)`` over a seeded random problem, or
    over ``problem = (features, logits, weights, upstream)`` when given.
    Coordinates whose ``+step`` or ``-step`` perturbation changes any max
    selection sit on a tie and are skipped.
    """
    if problem is None:
        problem = random_problem(seed, shapes, channels, classes, filter)
    feats, logits, weights, upstream = problem
    grads = dmf_backward(feats, logits, weights, upstream)
    base_sig = _argmax_signature(feats, weights)
    report = GradcheckReport(seed, step, tolerance)

    def objective(f, z, w):
        return sum(float((o * u).sum()) for o, u in zip(dmf_forward(f, z, w).levels, upstream))

    def probe(name, analytic, build):
        worst = report.per_tensor.get(name, 0.0)
        for idx in np.ndindex(analytic.shape):
            f_p, z_p, w_p = build(idx, step)
            f_m, z_m, w_m = build(idx, -step)
            if name != "logits" and not (_same(_argmax_signature(f_p, w_p), base_sig)
                                         and _same(_argmax_signature(f_m, w_m), base_sig)):
                report.skipped += 1
                continue
            numeric = (objective(f_p, z_p, w_p) - objective(f_m, z_m, w_m)) / (2 * step)
            err = relative_error(float(analytic[idx]), numeric)
            worst = max(worst, err)
            report.checked += 1
        report.per_tensor[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)

    for s in range(len(feats)):
        def build_f(idx, h, s=s):
            levels = [x.copy() for x in feats.levels]
            levels[s][idx] += h
            return FeaturePyramid(levels, feats.strides), logits, weights
        probe("features", grads.features[s], build_f)

        def build_z(idx, h, s=s):
            levels = [x.copy() for x in logits.levels]
            levels[s][idx] += h
            return feats, FeaturePyramid(levels, logits.strides), weights
        probe("logits", grads.logits[s], build_z)

    for name, value in weights.as_dict().items():
        def build_w(idx, h, name=name, value=value):
            arr = value.copy()
            arr[idx] += h
            return feats, logits, weights.replace(**{name: arr})
        probe(name, grads.weights[name], build_w)
    return report
