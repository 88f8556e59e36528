"""COCO-protocol average precision / recall and duplicate diagnostics.

Area ranges are not split (no small/medium/large). Each (image, category)
keeps its ``max_dets`` highest-scoring detections, 100 by default.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np

from .detections import Detections
from .geometry import GroundTruthSet, pairwise_iou

COCO_IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

GtInput = Union[GroundTruthSet, Mapping[int, GroundTruthSet]]


def _gt_map(gts: GtInput) -> Dict[int, GroundTruthSet]:
    if isinstance(gts, GroundTruthSet):
        return {0: gts}
    return dict(gts)


@dataclass
class MatchResult:
    tp: np.ndarray          # (T, M) bool per threshold and detection
    matched_gt: np.ndarray  # (T, M) gt index within its image, or -1
    duplicate: np.ndarray   # (T, M) FP overlapping an already matched gt
    considered: np.ndarray  # (M,) within the per-image/category max_dets budget
    num_gts: Dict[int, int]  # per category
    fn: np.ndarray          # (T,) unmatched gts


def _match_all(dets: Detections, gts: GtInput, thresholds, max_dets: Optional[int]) -> MatchResult:
    gmap = _gt_map(gts)
    thr = np.atleast_1d(np.asarray(thresholds, dtype=np.float64))
    t_count, m = len(thr), len(dets)
    tp = np.zeros((t_count, m), dtype=bool)
    matched = np.full((t_count, m), -1, dtype=np.int64)
    dup = np.zeros((t_count, m), dtype=bool)
    considered = np.zeros(m, dtype=bool)
    num_gts: Dict[int, int] = {}
    total_gts = 0
    for g in gmap.values():
        total_gts += len(g)
        for c in g.categories:
            num_gts[int(c)] = num_gts.get(int(c), 0) + 1
    matched_count = np.zeros(t_count, dtype=np.int64)
    if m:
        keys = np.unique(np.stack([dets.image_ids, dets.categories], axis=1), axis=0)
    else:
        keys = np.zeros((0, 2), dtype=np.int64)
    for image_id, cat in keys:
        idx = np.flatnonzero((dets.image_ids == image_id) & (dets.categories == cat))
        idx = idx[np.argsort(-dets.scores[idx], kind="stable")]
        if max_dets is not None:
            idx = idx[:max_dets]
        considered[idx] = True
        g = gmap.get(int(image_id))
        if g is None or len(g) == 0:
            continue
        gidx = np.flatnonzero(g.categories == cat)
        if gidx.size == 0:
            continue
        ious = pairwise_iou(dets.boxes[idx], g.boxes[gidx])
        taken = np.zeros((t_count, gidx.size), dtype=bool)
        for r, d in enumerate(idx):
            row = ious[r]
            ok = (~taken) & (row[None, :] >= thr[:, None])
            cand = np.where(ok, row[None, :], -1.0)
            best = np.argmax(cand, axis=1)
            hit = cand[np.arange(t_count), best] >= 0.0
            tp[hit, d] = True
            matched[hit, d] = gidx[best[hit]]
            taken[np.flatnonzero(hit), best[hit]] = True
            # duplicates: a miss that overlaps a gt someone already claimed
            dup[~hit, d] = np.any(taken[~hit] & (row[None, :] >= thr[~hit, None]), axis=1)
        matched_count += taken.sum(axis=1)
    return MatchResult(tp, matched, dup, considered, num_gts, total_gts - matched_count)


def match_detections(dets: Detections, gts: GtInput, iou_thr: float = 0.5,
                     max_dets: Optional[int] = None):
    """Greedy score-ordered matching at one IoU threshold.

    Returns ``(tp, matched_gt, fn)``: per-detection TP flags, the matched gt
    index (or -1), and the number of unmatched ground truths.
    """
    res = _match_all(dets, gts, [iou_thr], max_dets)
    return res.tp[0], res.matched_gt[0], int(res.fn[0])


def _ap_from_flags(scores: np.ndarray, tp: np.ndarray, n_gt: int, interpolation: str) -> float:
    if n_gt == 0:
        return float("nan")
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    tps = np.cumsum(tp[order])
    fps = np.cumsum(~tp[order])
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, np.finfo(np.float64).eps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "101":
        inds = np.searchsorted(recall, RECALL_POINTS, side="left")
        vals = np.where(inds < len(envelope), envelope[np.minimum(inds, len(envelope) - 1)], 0.0)
        return float(vals.mean())
    if interpolation == "all":
        prev = np.concatenate([[0.0], recall[:-1]])
        return float(((recall - prev) * envelope).sum())
    raise ValueError(f"unknown interpolation {interpolation!r}; use '101' or 'all'")


def _per_class_ap(dets: Detections, res: MatchResult, t: int, interpolation: str) -> Dict[int, float]:
    out = {}
    for cat, n_gt in sorted(res.num_gts.items()):
        sel = res.considered & (dets.categories == cat)
        out[cat] = _ap_from_flags(dets.scores[sel], res.tp[t, sel], n_gt, interpolation)
    return out


def _mean(values) -> float:
    values = [v for v in values if not np.isnan(v)]
    return float(np.mean(values)) if values else 0.0


def average_precision(dets: Detections, gts: GtInput, iou_thr: float = 0.5,
                      interpolation: str = "101", max_dets: Optional[int] = 100) -> float:
    """Category-averaged AP at one IoU threshold.

    ``interpolation`` is ``"101"`` (COCO recall grid) or ``"all"``
    (area under the precision envelope at every recall step).
    """
    res = _match_all(dets, gts, [iou_thr], max_dets)
    return _mean(_per_class_ap(dets, res, 0, interpolation).values())


def average_recall(dets: Detections, gts: GtInput, iou_thrs=COCO_IOU_THRESHOLDS,
                   max_dets: int = 100) -> float:
    """Recall with at most ``max_dets`` per image and category, averaged over
    thresholds and categories."""
    thrs = np.atleast_1d(iou_thrs)
    res = _match_all(dets, gts, thrs, max_dets)
    return _recall(dets, res)


def _recall(dets: Detections, res: MatchResult) -> float:
    vals = []
    for cat, n_gt in res.num_gts.items():
        sel = res.considered & (dets.categories == cat)
        vals.append(res.tp[:, sel].sum(axis=1) / n_gt)
    return float(np.mean(vals)) if vals else 0.0


def duplicate_count(dets: Detections, gts: GtInput, iou_thr: float = 0.5,
                    max_dets: Optional[int] = None) -> int:
    """False positives overlapping (IoU >= ``iou_thr``) a gt already matched."""
    res = _match_all(dets, gts, [iou_thr], max_dets)
    return int(res.duplicate[0].sum())


@dataclass
class EvalResult:
    mAP: float
    AP50: float
    AP75: float
    AR: float
    per_class: Dict[int, float] = field(default_factory=dict)
    duplicate_count: int = 0

    def as_row(self) -> Dict[str, float]:
        return {"mAP": self.mAP, "AP50": self.AP50, "AP75": self.AP75, "AR": self.AR,
                "duplicates": self.duplicate_count}


def evaluate(dets: Detections, gts: GtInput, iou_thrs: Sequence[float] = COCO_IOU_THRESHOLDS,
             max_dets: int = 100, interpolation: str = "101") -> EvalResult:
    """Full COCO-style summary over IoU thresholds .50:.05:.95."""
    thrs = np.asarray(iou_thrs, dtype=np.float64)
    res = _match_all(dets, gts, thrs, max_dets)
    per_t = [_per_class_ap(dets, res, t, interpolation) for t in range(len(thrs))]
    cats = sorted(res.num_gts)
    per_class = {c: _mean(p[c] for p in per_t) for c in cats}
    ap_t = [_mean(p.values()) for p in per_t]

    def at(v):
        hits = np.flatnonzero(np.isclose(thrs, v))
        return ap_t[hits[0]] if hits.size else float("nan")

    i50 = np.flatnonzero(np.isclose(thrs, 0.5))
    dups = int(res.duplicate[i50[0]].sum()) if i50.size else 0
    return EvalResult(float(np.mean(ap_t)) if ap_t and cats else 0.0, at(0.5), at(0.75),
                      _recall(dets, res), per_class, dups)
