"""Boxes, overlap measures and spatial-membership predicates.

Boxes are corner form ``(x1, y1, x2, y2)`` in continuous pixel coordinates.
Areas are ``(x2 - x1) * (y2 - y1)`` with no ``+1`` term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

BoxLike = Union["Box", Sequence[float], np.ndarray]


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"malformed box {self.as_tuple()}: need x1<=x2 and y1<=y2")

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "Box":
        return cls(float(x), float(y), float(x + w), float(y + h))

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def degenerate(self) -> bool:
        return self.x1 == self.x2 or self.y1 == self.y2


@dataclass(frozen=True)
class GroundTruth:
    category: int
    box: Box
    id: int = 0


@dataclass(frozen=True)
class Prediction:
    """A single per-location detector output."""

    scores: Tuple[float, ...]
    box: Box
    level: int = 0
    cell: Tuple[int, int] = (0, 0)
    anchor: Optional[Box] = None


def _as_tuple(b: BoxLike) -> Tuple[float, float, float, float]:
    if isinstance(b, Box):
        return b.as_tuple()
    x1, y1, x2, y2 = (float(v) for v in b)
    return x1, y1, x2, y2


def area(b: BoxLike) -> float:
    x1, y1, x2, y2 = _as_tuple(b)
    return max(x2 - x1, 0.0) * max(y2 - y1, 0.0)


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union; 0 when the union is empty."""
    ax1, ay1, ax2, ay2 = _as_tuple(a)
    bx1, by1, bx2, by2 = _as_tuple(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BoxLike, b: BoxLike) -> float:
    """Generalized IoU in [-1, 1]."""
    ax1, ay1, ax2, ay2 = _as_tuple(a)
    bx1, by1, bx2, by2 = _as_tuple(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = area(a) + area(b) - inter
    hull = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    if hull <= 0.0:
        return 0.0
    value = inter / union if union > 0.0 else 0.0
    return value - (hull - union) / hull


def center_of(b: BoxLike) -> Tuple[float, float]:
    x1, y1, x2, y2 = _as_tuple(b)
    return (x1 + x2) / 2.0, (y1 + y2) / 2.0


def in_box(point: Tuple[float, float], gt: BoxLike) -> bool:
    x, y = point
    x1, y1, x2, y2 = _as_tuple(gt)
    return x1 <= x <= x2 and y1 <= y <= y2


def in_center_region(point, gt: BoxLike, radius_cells: float = 1.5, stride: float = 8.0) -> bool:
    """Whether ``point`` lies in the center-sampling square of ``gt``.

    The square has half-side ``radius_cells * stride`` around the box center
    and is clipped to the box itself. Boundaries are inclusive, so an
    infinite radius reduces to the inside-box test.
    """
    if stride <= 0:
        raise ValueError("stride must be positive")
    cx, cy = center_of(gt)
    half = radius_cells * stride
    x, y = point
    if math.isinf(half):
        return in_box(point, gt)
    return abs(x - cx) <= half and abs(y - cy) <= half and in_box(point, gt)


# ---------------------------------------------------------------------------
# vectorised forms, (G, 4) x (N, 4) -> (G, N)

def as_boxes(boxes) -> np.ndarray:
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"boxes must have shape (n, 4), got {arr.shape}")
    return arr


def box_areas(boxes) -> np.ndarray:
    b = as_boxes(boxes)
    return np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)


def _pairwise_inter_union(a: np.ndarray, b: np.ndarray):
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    return inter, union


def pairwise_iou(a, b) -> np.ndarray:
    a, b = as_boxes(a), as_boxes(b)
    inter, union = _pairwise_inter_union(a, b)
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def pairwise_giou(a, b) -> np.ndarray:
    a, b = as_boxes(a), as_boxes(b)
    inter, union = _pairwise_inter_union(a, b)
    hw = np.maximum(a[:, None, 2], b[None, :, 2]) - np.minimum(a[:, None, 0], b[None, :, 0])
    hh = np.maximum(a[:, None, 3], b[None, :, 3]) - np.minimum(a[:, None, 1], b[None, :, 1])
    hull = hw * hh
    ious = np.zeros_like(inter)
    np.divide(inter, union, out=ious, where=union > 0)
    slack = np.zeros_like(inter)
    np.divide(hull - union, hull, out=slack, where=hull > 0)
    return np.where(hull > 0, ious - slack, 0.0)


def box_centers(boxes) -> np.ndarray:
    b = as_boxes(boxes)
    return np.stack([(b[:, 0] + b[:, 2]) / 2.0, (b[:, 1] + b[:, 3]) / 2.0], axis=1)


def points_in_boxes(points, boxes) -> np.ndarray:
    """(G, N) mask: point n inside box g, inclusive."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    b = as_boxes(boxes)
    return ((p[None, :, 0] >= b[:, None, 0]) & (p[None, :, 0] <= b[:, None, 2])
            & (p[None, :, 1] >= b[:, None, 1]) & (p[None, :, 1] <= b[:, None, 3]))


def points_in_center_regions(points, boxes, radius_cells: float, strides) -> np.ndarray:
    """(G, N) mask for :func:`in_center_region` with a per-point stride."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    b = as_boxes(boxes)
    strides = np.broadcast_to(np.asarray(strides, dtype=np.float64), (p.shape[0],))
    inside = points_in_boxes(p, b)
    if math.isinf(radius_cells):
        return inside
    c = box_centers(b)
    half = radius_cells * strides
    near = ((np.abs(p[None, :, 0] - c[:, None, 0]) <= half[None, :])
            & (np.abs(p[None, :, 1] - c[:, None, 1]) <= half[None, :]))
    return near & inside


# ---------------------------------------------------------------------------
# per-image collections

@dataclass
class GroundTruthSet:
    """Ground truths of one image as parallel arrays."""

    boxes: np.ndarray
    categories: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.boxes = as_boxes(self.boxes)
        self.categories = np.asarray(self.categories, dtype=np.int64).reshape(-1)
        if self.ids is None:
            self.ids = np.arange(len(self.categories), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if not (len(self.boxes) == len(self.categories) == len(self.ids)):
            raise ValueError("ground-truth arrays differ in length")

    def __len__(self):
        return len(self.categories)

    @classmethod
    def empty(cls) -> "GroundTruthSet":
        return cls(np.zeros((0, 4)), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_list(cls, gts: Iterable[GroundTruth]) -> "GroundTruthSet":
        gts = list(gts)
        if not gts:
            return cls.empty()
        return cls(np.array([g.box.as_tuple() for g in gts]),
                   np.array([g.category for g in gts]),
                   np.array([g.id for g in gts]))

    def to_list(self):
        return [GroundTruth(int(c), Box(*map(float, b)), int(i))
                for b, c, i in zip(self.boxes, self.categories, self.ids)]

    @property
    def areas(self) -> np.ndarray:
        return box_areas(self.boxes)


@dataclass
class PredictionSet:
    """Dense predictions of one image as parallel arrays.

    ``scores`` is (N, K); ``cells`` holds (row, col) on the grid of ``levels``;
    ``strides`` is the per-prediction stride of its level.
    """

    scores: np.ndarray
    boxes: np.ndarray
    levels: np.ndarray
    cells: np.ndarray
    strides: np.ndarray
    anchors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim == 1:
            self.scores = self.scores[:, None]
        self.boxes = as_boxes(self.boxes)
        n = len(self.boxes)
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        self.strides = np.broadcast_to(np.asarray(self.strides, dtype=np.float64), (n,)).copy()
        if self.anchors is not None:
            self.anchors = as_boxes(self.anchors)
        for name in ("scores", "levels", "cells"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"prediction field {name!r} has length "
                                 f"{len(getattr(self, name))}, expected {n}")
        if np.any(self.scores < 0) or np.any(self.scores > 1) or not np.all(np.isfinite(self.scores)):
            raise ValueError("prediction scores must lie in [0, 1]")

    def __len__(self):
        return len(self.boxes)

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    @property
    def locations(self) -> np.ndarray:
        """Cell-center coordinates (x, y) in image pixels."""
        return np.stack([(self.cells[:, 1] + 0.5) * self.strides,
                         (self.cells[:, 0] + 0.5) * self.strides], axis=1)

    def default_anchors(self, scale: float = 8.0) -> np.ndarray:
        """Square anchors of side ``scale * stride`` centred on each cell."""
        if self.anchors is not None:
            return self.anchors
        loc = self.locations
        half = scale * self.strides / 2.0
        return np.stack([loc[:, 0] - half, loc[:, 1] - half,
                         loc[:, 0] + half, loc[:, 1] + half], axis=1)

    def subset(self, idx) -> "PredictionSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PredictionSet(self.scores[idx], self.boxes[idx], self.levels[idx],
                             self.cells[idx], self.strides[idx],
                             None if self.anchors is None else self.anchors[idx])

    @classmethod
    def empty(cls, num_classes: int = 1) -> "PredictionSet":
        return cls(np.zeros((0, num_classes)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 2)),
                   np.zeros(0))

    @classmethod
    def from_list(cls, preds: Sequence[Prediction], strides: Sequence[float]) -> "PredictionSet":
        preds = list(preds)
        if not preds:
            return cls.empty()
        anchors = None
        if all(p.anchor is not None for p in preds):
            anchors = np.array([p.anchor.as_tuple() for p in preds])
        levels = np.array([p.level for p in preds])
        return cls(np.array([p.scores for p in preds]), np.array([p.box.as_tuple() for p in preds]),
                   levels, np.array([p.cell for p in preds]),
                   np.asarray(strides, dtype=np.float64)[levels], anchors)
