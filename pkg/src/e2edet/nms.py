"""Class-wise greedy NMS with scale and spatial-window restrictions."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .detections import Detections
from .geometry import pairwise_iou
from .metrics import GtInput, evaluate


@dataclass(frozen=True)
class NmsConfig:
    """``spatial_range=None`` means an unbounded window."""

    iou_threshold: float = 0.6
    across_scales: bool = True
    spatial_range: Optional[int] = None
    score_floor: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.spatial_range is not None:
            if self.spatial_range < 1 or self.spatial_range % 2 == 0:
                raise ValueError(f"spatial_range must be odd or None, got {self.spatial_range}")

    @property
    def config_id(self) -> str:
        scale = "across" if self.across_scales else "per_scale"
        window = "inf" if self.spatial_range is None else f"{self.spatial_range}x{self.spatial_range}"
        return f"{scale}_{window}"

    @property
    def range_label(self) -> str:
        return "inf" if self.spatial_range is None else str(self.spatial_range)


# Rows of the spatial-range / cross-scale study, strictest to loosest.
STUDY_CONFIGS = (
    NmsConfig(across_scales=False, spatial_range=1),
    NmsConfig(across_scales=False, spatial_range=3),
    NmsConfig(across_scales=False, spatial_range=5),
    NmsConfig(across_scales=False, spatial_range=None),
    NmsConfig(across_scales=True, spatial_range=None),
)


def nms_order(dets: Detections, idx: np.ndarray) -> np.ndarray:
    """Sort ``idx`` by (-score, level, row, col), stable."""
    keys = (dets.cells[idx, 1], dets.cells[idx, 0], dets.levels[idx], -dets.scores[idx])
    return idx[np.lexsort(keys)]


def may_suppress(dets: Detections, survivor: int, others: np.ndarray, cfg: NmsConfig) -> np.ndarray:
    """Which of ``others`` the survivor is allowed to suppress under ``cfg``."""
    ok = np.ones(len(others), dtype=bool)
    if not cfg.across_scales:
        ok &= dets.levels[others] == dets.levels[survivor]
    if cfg.spatial_range is not None:
        half = cfg.spatial_range // 2
        s = dets.strides[survivor]
        # project candidate cell centres onto the survivor's grid
        cy = (dets.cells[others, 0] + 0.5) * dets.strides[others]
        cx = (dets.cells[others, 1] + 0.5) * dets.strides[others]
        row = np.floor(cy / s)
        col = np.floor(cx / s)
        ok &= (np.abs(row - dets.cells[survivor, 0]) <= half) & (np.abs(col - dets.cells[survivor, 1]) <= half)
    return ok


def greedy_nms(dets: Detections, cfg: NmsConfig = NmsConfig()) -> np.ndarray:
    """Indices of kept detections, in suppression order per (image, class).

    A candidate is removed when a kept detection of the same image and class
    overlaps it with IoU above the threshold and ``cfg`` allows the pair.
    """
    keep: List[int] = []
    if len(dets) == 0:
        return np.zeros(0, dtype=np.int64)
    valid = np.flatnonzero(dets.scores >= cfg.score_floor)
    groups = np.unique(np.stack([dets.image_ids[valid], dets.categories[valid]], axis=1), axis=0)
    for image_id, cat in groups:
        idx = valid[(dets.image_ids[valid] == image_id) & (dets.categories[valid] == cat)]
        order = nms_order(dets, idx)
        while order.size:
            i = order[0]
            keep.append(int(i))
            rest = order[1:]
            if rest.size == 0:
                break
            ious = pairwise_iou(dets.boxes[i], dets.boxes[rest])[0]
            suppressed = (ious > cfg.iou_threshold) & may_suppress(dets, i, rest, cfg)
            order = rest[~suppressed]
    return np.asarray(keep, dtype=np.int64)


def apply_nms(dets: Detections, cfg: Optional[NmsConfig]) -> Detections:
    if cfg is None:
        return dets
    return dets.select(np.sort(greedy_nms(dets, cfg)))


STUDY_COLUMNS = ["config_id", "across_scales", "spatial_range", "AP", "AP50", "AP75", "AR"]


def nms_study(dets: Detections, gts: GtInput,
              configs: Sequence[NmsConfig] = STUDY_CONFIGS) -> List[Dict[str, object]]:
    """Evaluate each NMS configuration on one fixed detection set."""
    rows = []
    for cfg in configs:
        res = evaluate(apply_nms(dets, cfg), gts)
        rows.append({"config_id": cfg.config_id, "across_scales": cfg.across_scales,
                     "spatial_range": cfg.range_label, "AP": res.mAP, "AP50": res.AP50,
                     "AP75": res.AP75, "AR": res.AR})
    return rows


def format_float(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.6f}"
    return str(v)


def rows_to_csv(rows: Sequence[Mapping[str, object]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_float(r[c]) for c in columns])
    return buf.getvalue()
