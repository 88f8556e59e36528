"""Prediction-aware matching quality between ground truths and predictions.

    Q[i, j] = prior[i, j] * score_j(c_i) ** (1 - alpha) * IoU(b_i, box_j) ** alpha

with an additive variant ``(1 - alpha) * score + alpha * IoU`` for ablations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GroundTruthSet, PredictionSet, pairwise_iou, points_in_center_regions

PRIORS = ("center_sampling", "inside_box", "global")
FUSIONS = ("mul", "add")


@dataclass(frozen=True)
class QualityParams:
    alpha: float = 0.8
    prior: str = "center_sampling"
    fusion: str = "mul"
    radius: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.prior not in PRIORS:
            raise ValueError(f"unknown prior {self.prior!r}; choose from {PRIORS}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; choose from {FUSIONS}")


def spatial_prior_mask(gts: GroundTruthSet, preds: PredictionSet, prior: str = "center_sampling",
                       radius: float = 1.5) -> np.ndarray:
    """(G, N) mask of predictions whose cell centre lies in each gt's candidate region."""
    g, n = len(gts), len(preds)
    if prior == "global":
        return np.ones((g, n), dtype=bool)
    if g == 0 or n == 0:
        return np.zeros((g, n), dtype=bool)
    if prior == "inside_box":
        radius = np.inf
    elif prior != "center_sampling":
        raise ValueError(f"unknown prior {prior!r}")
    return points_in_center_regions(preds.locations, gts.boxes, radius, preds.strides)


def fuse(score, overlap, alpha: float, fusion: str = "mul"):
    score = np.asarray(score, dtype=np.float64)
    overlap = np.asarray(overlap, dtype=np.float64)
    if fusion == "mul":
        # numpy evaluates 0.0 ** 0.0 as 1.0, which keeps alpha in {0, 1} total
        return score ** (1.0 - alpha) * overlap ** alpha
    if fusion == "add":
        return (1.0 - alpha) * score + alpha * overlap
    raise ValueError(f"unknown fusion {fusion!r}")


def quality_matrix(gts: GroundTruthSet, preds: PredictionSet,
                   params: QualityParams = QualityParams()) -> np.ndarray:
    """(G, N) matching quality in [0, 1]."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return np.zeros((g, n))
    score = preds.scores[:, gts.categories].T
    overlap = pairwise_iou(gts.boxes, preds.boxes)
    q = fuse(score, overlap, params.alpha, params.fusion)
    mask = spatial_prior_mask(gts, preds, params.prior, params.radius)
    return np.clip(np.where(mask, q, 0.0), 0.0, 1.0)
