"""Input coercion shared by the estimator wrappers and the CLI."""
from __future__ import annotations

from typing import Mapping, Union

import numpy as np
from sklearn.exceptions import NotFittedError

from .geometry import GroundTruthSet, PredictionSet
from .pyramid import FeaturePyramid


def check_pyramid(p) -> FeaturePyramid:
    if isinstance(p, FeaturePyramid):
        return p
    if isinstance(p, (list, tuple)) and p and all(isinstance(x, np.ndarray) for x in p):
        # bare list of levels: assume stride 8 doubling
        return FeaturePyramid(list(p), [8.0 * 2 ** i for i in range(len(p))])
    raise TypeError(f"expected a FeaturePyramid or list of (C, H, W) arrays, got {type(p).__name__}")


def check_ground_truths(g) -> GroundTruthSet:
    if isinstance(g, GroundTruthSet):
        return g
    if isinstance(g, tuple) and len(g) == 2:
        return GroundTruthSet(np.asarray(g[0], dtype=np.float64), np.asarray(g[1]))
    raise TypeError("ground truths must be a GroundTruthSet or a (boxes, categories) pair")


def check_predictions(p) -> PredictionSet:
    if not isinstance(p, PredictionSet):
        raise TypeError(f"expected a PredictionSet, got {type(p).__name__}")
    return p


def check_gt_map(gts: Union[GroundTruthSet, Mapping[int, GroundTruthSet]]):
    if isinstance(gts, GroundTruthSet):
        return {0: gts}
    if not isinstance(gts, Mapping):
        raise TypeError("ground truths must be a GroundTruthSet or {image_id: GroundTruthSet}")
    return {int(k): check_ground_truths(v) for k, v in gts.items()}


def check_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted; call fit first")
