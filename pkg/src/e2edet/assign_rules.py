"""Label-assignment rules: one-to-one (POTO, Anchor, Center, loss cost) and
one-to-many (FCOS, ATSS and the quality-driven variants).

Every rule maps a ground-truth set and a prediction set of one image to a
:class:`TargetSet`. One-to-many conflicts go to the smallest-area ground
truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (GroundTruthSet, PredictionSet, box_centers, pairwise_iou,
                       points_in_boxes, points_in_center_regions)
from .losses import LossParams, foreground_cost
from .matching import Assignment, hungarian_max, solve_min_cost
from .quality import QualityParams, quality_matrix

INF = float("inf")
FCOS_LEVEL_RANGES: Tuple[Tuple[float, float], ...] = (
    (0, 64), (64, 128), (128, 256), (256, 512), (512, INF))


@dataclass
class TargetSet:
    """Per-prediction targets: ``labels[j]`` is a gt index or -1 for background."""

    labels: np.ndarray
    rule: str = ""
    one_to_one: bool = False
    assignment: Optional[Assignment] = None
    unmatched: List[int] = field(default_factory=list)

    @property
    def foreground(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)

    @property
    def num_foreground(self) -> int:
        return int((self.labels >= 0).sum())

    def pairs(self) -> List[Tuple[int, int]]:
        """(gt index, prediction index) for every foreground prediction."""
        return [(int(self.labels[j]), int(j)) for j in self.foreground]


@dataclass(frozen=True)
class RuleConfig:
    quality: QualityParams = QualityParams()
    loss: LossParams = LossParams()
    level_ranges: Tuple[Tuple[float, float], ...] = FCOS_LEVEL_RANGES
    radius: float = 1.5
    k: int = 9
    anchor_scale: float = 8.0


def _background(n: int) -> np.ndarray:
    return np.full(n, -1, dtype=np.int64)


def _resolve(claims: np.ndarray, gts: GroundTruthSet) -> np.ndarray:
    """Collapse a (G, N) claim mask to labels, smallest gt area first."""
    labels = _background(claims.shape[1])
    if claims.size == 0:
        return labels
    order = np.lexsort((np.arange(len(gts)), gts.areas))
    for i in order[::-1]:
        labels[claims[i]] = i
    return labels


def _from_pairs(n: int, pairs, rule: str, assignment=None, unmatched=()) -> TargetSet:
    labels = _background(n)
    for i, j in pairs:
        labels[j] = i
    return TargetSet(labels, rule, True, assignment, list(unmatched))


def level_of_size(size: float, level_ranges: Sequence[Tuple[float, float]]) -> int:
    """Index of the range containing ``size``; ranges are half-open [lo, hi)."""
    for s, (lo, hi) in enumerate(level_ranges):
        if lo <= size < hi:
            return s
    return len(level_ranges) - 1 if size >= level_ranges[-1][0] else 0


def gt_levels(gts: GroundTruthSet, level_ranges) -> np.ndarray:
    sides = np.maximum(gts.boxes[:, 2] - gts.boxes[:, 0], gts.boxes[:, 3] - gts.boxes[:, 1])
    return np.array([level_of_size(s, level_ranges) for s in sides], dtype=np.int64)


# ---------------------------------------------------------------------------
# one-to-one

def poto_assign(gts: GroundTruthSet, preds: PredictionSet,
                quality_params: QualityParams = QualityParams()) -> TargetSet:
    """Quality-maximising one-to-one assignment."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "poto", True, Assignment([], 0.0, list(range(g))),
                         list(range(g)))
    q = quality_matrix(gts, preds, quality_params)
    if g > n:
        q = np.hstack([q, np.zeros((g, g - n))])
    result = hungarian_max(q)
    return _from_pairs(n, result.pairs, "poto", result, result.unmatched)


def loss_cost_assign(gts: GroundTruthSet, preds: PredictionSet,
                     loss_params: LossParams = LossParams()) -> TargetSet:
    """One-to-one assignment minimising the foreground loss."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "loss_cost", True, Assignment([], 0.0, list(range(g))),
                         list(range(g)))
    cost = foreground_cost(gts, preds, loss_params)
    if g > n:
        cost = np.hstack([cost, np.full((g, g - n), cost.max() + 1.0)])
    cols = solve_min_cost(cost)
    pairs = [(i, int(j)) for i, j in enumerate(cols) if j < n]
    unmatched = [i for i, j in enumerate(cols) if j >= n]
    total = 0.0
    for i, j in pairs:
        total += cost[i, j]
    result = Assignment(pairs, float(total), unmatched)
    return _from_pairs(n, pairs, "loss_cost", result, unmatched)


def anchor_rule(gts: GroundTruthSet, preds: PredictionSet, anchor_scale: float = 8.0) -> TargetSet:
    """Each gt takes its max-IoU anchor; contested anchors go to the higher IoU.

    Resolved greedily: the globally best remaining (gt, anchor) pair is fixed
    first, so a losing gt falls back to its next-best free anchor.
    """
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "anchor", True, None, list(range(g)))
    ious = pairwise_iou(gts.boxes, preds.default_anchors(anchor_scale))
    free_rows = np.ones(g, dtype=bool)
    free_cols = np.ones(n, dtype=bool)
    pairs = []
    for _ in range(g):
        masked = np.where(free_rows[:, None] & free_cols[None, :], ious, -1.0)
        i, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
        if masked[i, j] <= 0.0:
            break
        pairs.append((int(i), int(j)))
        free_rows[i] = False
        free_cols[j] = False
    pairs.sort()
    total = float(sum(ious[i, j] for i, j in pairs))
    unmatched = [int(i) for i in np.flatnonzero(free_rows)]
    return _from_pairs(n, pairs, "anchor", Assignment(pairs, total, unmatched), unmatched)


def center_rule(gts: GroundTruthSet, preds: PredictionSet,
                level_ranges=FCOS_LEVEL_RANGES) -> TargetSet:
    """Each gt takes the cell nearest its centre on the level its size selects.

    The level is the range containing the gt's longer side. Distance ties go
    to the smaller (row, col). A cell already taken leaves the later gt
    unmatched.
    """
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "center", True, None, list(range(g)))
    levels = gt_levels(gts, level_ranges)
    centers = box_centers(gts.boxes)
    loc = preds.locations
    taken = np.zeros(n, dtype=bool)
    pairs, unmatched = [], []
    for i in range(g):
        idx = np.flatnonzero(preds.levels == levels[i])
        if idx.size == 0:
            unmatched.append(i)
            continue
        d2 = ((loc[idx] - centers[i]) ** 2).sum(axis=1)
        order = np.lexsort((preds.cells[idx, 1], preds.cells[idx, 0], d2))
        j = int(idx[order[0]])
        if taken[j]:
            unmatched.append(i)
            continue
        taken[j] = True
        pairs.append((i, j))
    return _from_pairs(n, pairs, "center", Assignment(pairs, float(len(pairs)), unmatched),
                       unmatched)


# ---------------------------------------------------------------------------
# one-to-many

def _level_range_mask(gts: GroundTruthSet, preds: PredictionSet, level_ranges) -> np.ndarray:
    """(G, N): the FCOS regression-target size of each cell fits its level's range."""
    loc = preds.locations
    b = gts.boxes
    l = loc[None, :, 0] - b[:, None, 0]
    t = loc[None, :, 1] - b[:, None, 1]
    r = b[:, None, 2] - loc[None, :, 0]
    bt = b[:, None, 3] - loc[None, :, 1]
    m = np.maximum(np.maximum(l, t), np.maximum(r, bt))
    last = len(level_ranges) - 1
    lv = np.minimum(preds.levels, last)
    lo = np.array([level_ranges[s][0] for s in lv])
    hi = np.array([level_ranges[s][1] for s in lv])
    return (m >= lo[None, :]) & (m < hi[None, :])


def fcos_o2m(gts: GroundTruthSet, preds: PredictionSet, level_ranges=FCOS_LEVEL_RANGES,
             radius: float = 1.5) -> TargetSet:
    """Every cell passing the centre-sampling and level-range tests is foreground."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "fcos")
    claims = (points_in_center_regions(preds.locations, gts.boxes, radius, preds.strides)
              & _level_range_mask(gts, preds, level_ranges))
    return TargetSet(_resolve(claims, gts), "fcos")


def _stats_threshold(values: np.ndarray) -> float:
    # population standard deviation
    return float(values.mean() + values.std()) if values.size else INF


def _topk_per_level(key: np.ndarray, levels: np.ndarray, k: int, largest: bool) -> np.ndarray:
    """Indices of the k best entries of ``key`` within each level; stable."""
    chosen = []
    for lv in np.unique(levels):
        idx = np.flatnonzero(levels == lv)
        vals = -key[idx] if largest else key[idx]
        order = np.argsort(vals, kind="stable")[:k]
        chosen.append(idx[order])
    return np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)


def atss_o2m(gts: GroundTruthSet, preds: PredictionSet, k: int = 9,
             anchor_scale: float = 8.0) -> TargetSet:
    """Adaptive training sample selection on anchor IoU."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "atss")
    ious = pairwise_iou(gts.boxes, preds.default_anchors(anchor_scale))
    loc = preds.locations
    centers = box_centers(gts.boxes)
    inside = points_in_boxes(loc, gts.boxes)
    claims = np.zeros((g, n), dtype=bool)
    for i in range(g):
        dist = np.sqrt(((loc - centers[i]) ** 2).sum(axis=1))
        cand = _topk_per_level(dist, preds.levels, k, largest=False)
        thr = _stats_threshold(ious[i, cand])
        keep = cand[ious[i, cand] >= thr]
        claims[i, keep] = True
    return TargetSet(_resolve(claims & inside, gts), "atss")


def quality_atss(gts: GroundTruthSet, preds: PredictionSet,
                 quality_params: QualityParams = QualityParams(), k: int = 9) -> TargetSet:
    """Top-k qualities per level, pooled and thresholded at mean + std."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "quality_atss")
    q = quality_matrix(gts, preds, quality_params)
    claims = np.zeros((g, n), dtype=bool)
    for i in range(g):
        cand = _topk_per_level(q[i], preds.levels, k, largest=True)
        thr = _stats_threshold(q[i, cand])
        keep = cand[(q[i, cand] >= thr) & (q[i, cand] > 0.0)]
        claims[i, keep] = True
    return TargetSet(_resolve(claims, gts), "quality_atss")


def quality_fcos(gts: GroundTruthSet, preds: PredictionSet,
                 quality_params: QualityParams = QualityParams(), radius: float = 1.5) -> TargetSet:
    """Centre-sampling cells of the single level holding the gt's best quality."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "quality_fcos")
    q = quality_matrix(gts, preds, quality_params)
    region = points_in_center_regions(preds.locations, gts.boxes, radius, preds.strides)
    levels = np.unique(preds.levels)
    claims = np.zeros((g, n), dtype=bool)
    for i in range(g):
        best = np.array([q[i, preds.levels == lv].max() for lv in levels])
        if best.max() <= 0.0:
            continue
        chosen = levels[int(np.argmax(best))]
        claims[i] = region[i] & (preds.levels == chosen)
    return TargetSet(_resolve(claims, gts), "quality_fcos")


def quality_topk(gts: GroundTruthSet, preds: PredictionSet,
                 quality_params: QualityParams = QualityParams(), k: int = 9) -> TargetSet:
    """The k highest-quality predictions over all levels, per gt."""
    g, n = len(gts), len(preds)
    if g == 0 or n == 0:
        return TargetSet(_background(n), "quality_topk")
    q = quality_matrix(gts, preds, quality_params)
    claims = np.zeros((g, n), dtype=bool)
    for i in range(g):
        order = np.argsort(-q[i], kind="stable")[:k]
        claims[i, order[q[i, order] > 0.0]] = True
    return TargetSet(_resolve(claims, gts), "quality_topk")


# ---------------------------------------------------------------------------
# registry

RULES: Dict[str, Callable[[GroundTruthSet, PredictionSet, RuleConfig], TargetSet]] = {
    "poto": lambda g, p, c: poto_assign(g, p, c.quality),
    "anchor": lambda g, p, c: anchor_rule(g, p, c.anchor_scale),
    "center": lambda g, p, c: center_rule(g, p, c.level_ranges),
    "fcos": lambda g, p, c: fcos_o2m(g, p, c.level_ranges, c.radius),
    "atss": lambda g, p, c: atss_o2m(g, p, c.k, c.anchor_scale),
    "quality_atss": lambda g, p, c: quality_atss(g, p, c.quality, c.k),
    "quality_fcos": lambda g, p, c: quality_fcos(g, p, c.quality, c.radius),
    "quality_topk": lambda g, p, c: quality_topk(g, p, c.quality, c.k),
    "loss_cost": lambda g, p, c: loss_cost_assign(g, p, c.loss),
}
ONE_TO_ONE = frozenset({"poto", "anchor", "center", "loss_cost"})


def assign(rule: str, gts: GroundTruthSet, preds: PredictionSet,
           config: RuleConfig = RuleConfig()) -> TargetSet:
    try:
        fn = RULES[rule]
    except KeyError:
        raise ValueError(f"unknown assignment rule {rule!r}; choose from {sorted(RULES)}") from None
    return fn(gts, preds, config)
