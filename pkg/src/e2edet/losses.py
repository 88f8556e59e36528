"""Focal and GIoU losses, and the foreground/background training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GroundTruthSet, PredictionSet, pairwise_giou

EPS = 1e-7


@dataclass(frozen=True)
class LossParams:
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    regression_weight: float = 2.0

    def __post_init__(self):
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ValueError("focal_alpha must lie in [0, 1]")


def focal_loss(p, target, params: LossParams = LossParams()):
    """Elementwise ``-alpha_t (1 - p_t)^gamma log(p_t)``; ``p`` clamped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    t = np.asarray(target, dtype=np.float64)
    p_t = np.where(t > 0.5, p, 1.0 - p)
    alpha_t = np.where(t > 0.5, params.focal_alpha, 1.0 - params.focal_alpha)
    out = -alpha_t * (1.0 - p_t) ** params.focal_gamma * np.log(p_t)
    return out if out.ndim else float(out)


def giou_loss(a, b) -> float:
    return float(1.0 - pairwise_giou(a, b)[0, 0])


def foreground_cost(gts: GroundTruthSet, preds: PredictionSet,
                    params: LossParams = LossParams()) -> np.ndarray:
    """(G, N) foreground loss of pairing each ground truth with each prediction."""
    if len(gts) == 0 or len(preds) == 0:
        return np.zeros((len(gts), len(preds)))
    cls = focal_loss(preds.scores[:, gts.categories].T, 1.0, params)
    reg = 1.0 - pairwise_giou(gts.boxes, preds.boxes)
    return cls + params.regression_weight * reg


def background_loss(preds: PredictionSet, params: LossParams = LossParams()) -> np.ndarray:
    """Per-prediction background loss summed over classes, shape (N,)."""
    if len(preds) == 0:
        return np.zeros(0)
    return np.asarray(focal_loss(preds.scores, 0.0, params)).sum(axis=1)


def _check_assignment(pairs, g: int, n: int):
    seen = set()
    for i, j in pairs:
        if not (0 <= i < g) or not (0 <= j < n):
            raise IndexError(f"assignment pair ({i}, {j}) out of range for {g} gts, {n} preds")
        if j in seen:
            raise ValueError(f"prediction {j} assigned to more than one ground truth")
        seen.add(j)
    if len({i for i, _ in pairs}) != len(pairs):
        raise ValueError("ground truth assigned more than once")


def total_loss(gts: GroundTruthSet, preds: PredictionSet, assignment,
               params: LossParams = LossParams()) -> float:
    """Foreground loss over assigned pairs plus background loss over the rest.

    ``assignment`` is an :class:`~e2edet.matching.Assignment` or an iterable
    of ``(gt_index, pred_index)`` pairs.
    """
    pairs = [(int(i), int(j)) for i, j in getattr(assignment, "pairs", assignment)]
    _check_assignment(pairs, len(gts), len(preds))
    fg = 0.0
    if pairs:
        cost = foreground_cost(gts, preds, params)
        fg = sum(float(cost[i, j]) for i, j in pairs)
    mask = np.ones(len(preds), dtype=bool)
    mask[[j for _, j in pairs]] = False
    bg = float(background_loss(preds, params)[mask].sum())
    return fg + bg
