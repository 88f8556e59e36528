"""scikit-learn style wrappers around the functional core.

Parameters live in ``__init__`` and are exposed through ``get_params`` /
``set_params``; the wrapped functions do the work.
"""
from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .assign_rules import RULES, RuleConfig, TargetSet, assign
from .detections import Detections
from .metrics import EvalResult, evaluate
from .nms import NmsConfig, apply_nms
from .pyramid import FilterParams, hard_3dmf, max_filter_3d
from .quality import QualityParams
from .validation import (check_fitted, check_ground_truths, check_gt_map, check_predictions,
                         check_pyramid)


class MaxFilter3D(BaseEstimator, TransformerMixin):
    """3D max filtering of a feature pyramid.

    Parameters
    ----------
    tau : int
        Scale span of the tube (even).
    phi : int
        Spatial window (odd).
    hard : bool
        If True, keep only tube maxima and zero everything else.
    """

    def __init__(self, tau: int = 2, phi: int = 3, hard: bool = False):
        self.tau = tau
        self.phi = phi
        self.hard = hard

    def fit(self, X=None, y=None):
        self.params_ = FilterParams(self.tau, self.phi)
        return self

    def transform(self, X):
        params = getattr(self, "params_", None) or FilterParams(self.tau, self.phi)
        p = check_pyramid(X)
        return hard_3dmf(p, params) if self.hard else max_filter_3d(p, params)


class NMS(BaseEstimator, TransformerMixin):
    """Greedy class-wise NMS on a ``Detections`` batch."""

    def __init__(self, iou_threshold: float = 0.6, across_scales: bool = True,
                 spatial_range: Optional[int] = None, score_floor: float = 0.05):
        self.iou_threshold = iou_threshold
        self.across_scales = across_scales
        self.spatial_range = spatial_range
        self.score_floor = score_floor

    def _config(self) -> NmsConfig:
        return NmsConfig(self.iou_threshold, self.across_scales, self.spatial_range, self.score_floor)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X: Detections) -> Detections:
        if not isinstance(X, Detections):
            raise TypeError("NMS.transform expects Detections")
        return apply_nms(X, getattr(self, "config_", None) or self._config())


class LabelAssigner(BaseEstimator):
    """Label assignment for one image.

    ``fit(preds, gts)`` stores the ``TargetSet`` as ``targets_`` and the
    per-prediction labels (gt index, or -1 for background) as ``labels_``.
    """

    def __init__(self, rule: str = "poto", alpha: float = 0.8, prior: str = "center_sampling",
                 fusion: str = "mul", radius: float = 1.5, k: int = 9):
        self.rule = rule
        self.alpha = alpha
        self.prior = prior
        self.fusion = fusion
        self.radius = radius
        self.k = k

    def _rule_config(self) -> RuleConfig:
        q = QualityParams(self.alpha, self.prior, self.fusion, self.radius)
        return RuleConfig(quality=q, radius=self.radius, k=self.k)

    def fit(self, X, y):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        preds = check_predictions(X)
        gts = check_ground_truths(y)
        self.targets_: TargetSet = assign(self.rule, gts, preds, self._rule_config())
        self.labels_ = self.targets_.labels
        return self

    def predict(self, X=None) -> np.ndarray:
        check_fitted(self, "labels_")
        return self.labels_

    def fit_predict(self, X, y) -> np.ndarray:
        return self.fit(X, y).labels_


class DetectionEvaluator(BaseEstimator):
    """COCO-style evaluation. ``fit`` stores ground truths, ``score`` returns mAP."""

    def __init__(self, iou_thresholds: Sequence[float] = tuple(np.round(np.linspace(0.5, 0.95, 10), 2)),
                 max_dets: int = 100, interpolation: str = "101"):
        self.iou_thresholds = iou_thresholds
        self.max_dets = max_dets
        self.interpolation = interpolation

    def fit(self, X=None, y=None):
        if y is None:
            raise ValueError("DetectionEvaluator.fit needs ground truths as y")
        self.gts_ = check_gt_map(y)
        return self

    def evaluate(self, X: Detections) -> EvalResult:
        check_fitted(self, "gts_")
        return evaluate(X, self.gts_, self.iou_thresholds, self.max_dets, self.interpolation)

    def score(self, X: Detections, y: Optional[Mapping] = None) -> float:
        if y is not None:
            self.fit(None, y)
        return self.evaluate(X).mAP
