"""Seeded synthetic scenes and a duplicate-emitting oracle detector.

Random streams come from numpy's PCG64 generator. A run seeds one
``SeedSequence`` and spawns an independent child stream per image, so each
image is reproducible on its own and the result does not depend on how
images are scheduled.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assign_rules import FCOS_LEVEL_RANGES, ONE_TO_ONE, RuleConfig, assign, level_of_size
from .detections import Detections
from .geometry import GroundTruthSet, PredictionSet, pairwise_iou
from .metrics import evaluate
from .nms import NmsConfig, apply_nms, format_float, rows_to_csv
from .pyramid import FeaturePyramid, FilterParams, peak_mask

THREADS_ENV = "E2EDET_THREADS"


@dataclass(frozen=True)
class PyramidSpec:
    image_size: int = 512
    strides: Tuple[float, ...] = (8, 16, 32, 64, 128)
    level_ranges: Tuple[Tuple[float, float], ...] = FCOS_LEVEL_RANGES

    def grid(self, level: int) -> Tuple[int, int]:
        n = int(math.ceil(self.image_size / self.strides[level]))
        return n, n

    @property
    def num_levels(self) -> int:
        return len(self.strides)


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 512
    min_instances: int = 2
    max_instances: int = 8
    min_size: float = 24.0
    max_size: float = 320.0
    crowding: float = 0.0
    num_classes: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.crowding < 1.0:
            raise ValueError("crowding must lie in [0, 1)")
        if self.min_instances < 0 or self.max_instances < self.min_instances:
            raise ValueError("bad instance count range")
        if not 0 < self.min_size <= self.max_size < self.image_size:
            raise ValueError("bad size range")


@dataclass(frozen=True)
class OracleConfig:
    duplicates: int = 3
    decay: float = 0.8
    jitter: float = 0.04
    leak: float = 0.3
    spread: int = 1
    loc_noise: float = 0.02
    score_low: float = 0.5
    score_high: float = 1.0
    blob_sigma: float = 2.0
    seed: int = 1

    def __post_init__(self):
        if self.duplicates < 1:
            raise ValueError("duplicates must be >= 1")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.spread < 1:
            raise ValueError("spread must be >= 1")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


def image_rngs(seed: int, n: int) -> List[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# scenes

def _random_box(rng, cfg: SceneConfig):
    size = math.exp(rng.uniform(math.log(cfg.min_size), math.log(cfg.max_size)))
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    w = min(size * math.sqrt(aspect), cfg.image_size - 1.0)
    h = min(size / math.sqrt(aspect), cfg.image_size - 1.0)
    x = rng.uniform(0, cfg.image_size - w)
    y = rng.uniform(0, cfg.image_size - h)
    return np.array([x, y, x + w, y + h])


def _partner(rng, box, target: float, image_size: float):
    """A same-size copy shifted along one axis so the pair IoU equals ``target``."""
    w, h = box[2] - box[0], box[3] - box[1]
    axis = int(rng.integers(2))
    extent = w if axis == 0 else h
    shift = extent * (1.0 - target) / (1.0 + target)
    for sign in rng.permutation([-1.0, 1.0]):
        b = box.copy()
        b[[axis, axis + 2]] += sign * shift
        if b[axis] >= 0 and b[axis + 2] <= image_size:
            return b
    return None


def _scene(rng, cfg: SceneConfig) -> GroundTruthSet:
    count = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    if cfg.crowding > 0 and count % 2:
        count += 1
    boxes: List[np.ndarray] = []
    cats: List[int] = []
    attempts = 0
    while len(boxes) < count and attempts < 200:
        attempts += 1
        cluster = [_random_box(rng, cfg)]
        if cfg.crowding > 0:
            other = _partner(rng, cluster[0], cfg.crowding, cfg.image_size)
            if other is None:
                continue
            cluster.append(other)
        if boxes and pairwise_iou(np.array(cluster), np.array(boxes)).max() > 0.05:
            continue
        cat = int(rng.integers(cfg.num_classes))
        boxes.extend(cluster)
        cats.extend([cat] * len(cluster))
    if not boxes:
        return GroundTruthSet.empty()
    return GroundTruthSet(np.array(boxes), np.array(cats))


def gen_scenes(cfg: SceneConfig, n: int) -> List[GroundTruthSet]:
    """``n`` ground-truth sets, reproducible from ``cfg.seed``."""
    if n <= 0:
        return []
    return _map(lambda rng: _scene(rng, cfg), image_rngs(cfg.seed, n))


def mean_max_iou(gts: GroundTruthSet) -> float:
    """Mean over instances of the largest IoU with any other instance."""
    if len(gts) < 2:
        return 0.0
    ious = pairwise_iou(gts.boxes, gts.boxes)
    np.fill_diagonal(ious, 0.0)
    return float(ious.max(axis=1).mean())


# ---------------------------------------------------------------------------
# oracle detector

def _jitter(rng, box, scale):
    w, h = box[2] - box[0], box[3] - box[1]
    d = rng.uniform(-scale, scale, 4) * np.array([w, h, w, h])
    out = box + d
    out[2] = max(out[2], out[0] + 1e-3)
    out[3] = max(out[3], out[1] + 1e-3)
    return out


def _cell_of(x, y, stride, grid):
    r = min(max(int(y // stride), 0), grid[0] - 1)
    c = min(max(int(x // stride), 0), grid[1] - 1)
    return r, c


def _free_cell(level, cell, grid, taken):
    """``cell`` if free, else the nearest free cell by rings, scanned row-major."""
    r0, c0 = int(cell[0]), int(cell[1])
    for d in range(max(grid)):
        for r in range(r0 - d, r0 + d + 1):
            for c in range(c0 - d, c0 + d + 1):
                if max(abs(r - r0), abs(c - c0)) != d:
                    continue
                if 0 <= r < grid[0] and 0 <= c < grid[1] and (level, r, c) not in taken:
                    return r, c
    return None


def render_scores(preds: PredictionSet, spec: PyramidSpec, num_classes: int,
                  sigma: float) -> FeaturePyramid:
    """Per-level (K, H, W) score maps: each prediction a Gaussian blob, max-combined."""
    levels = [np.zeros((num_classes,) + spec.grid(s)) for s in range(spec.num_levels)]
    for j in range(len(preds)):
        s = preds.levels[j]
        r, c = preds.cells[j]
        grid = levels[s]
        for k in np.flatnonzero(preds.scores[j] > 0):
            score = preds.scores[j, k]
            if sigma <= 0:
                grid[k, r, c] = max(grid[k, r, c], score)
                continue
            rad = int(math.ceil(3 * sigma))
            r0, r1 = max(r - rad, 0), min(r + rad + 1, grid.shape[1])
            c0, c1 = max(c - rad, 0), min(c + rad + 1, grid.shape[2])
            yy, xx = np.mgrid[r0:r1, c0:c1]
            blob = score * np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / (2 * sigma ** 2))
            np.maximum(grid[k, r0:r1, c0:c1], blob, out=grid[k, r0:r1, c0:c1])
    return FeaturePyramid(levels, spec.strides)


def oracle_predict(gts: GroundTruthSet, spec: PyramidSpec, cfg: OracleConfig,
                   num_classes: int, rng: Optional[np.random.Generator] = None):
    """Emit ``cfg.duplicates`` predictions per ground truth.

    The first is a near-perfect box at the gt's Center-rule cell; the rest are
    jittered copies with geometrically decayed scores, placed in the spatial
    neighbourhood (``spread`` cells) or, with probability ``leak``, on an
    adjacent level. Scores are then read back from the rendered score maps.

    Returns ``(PredictionSet, FeaturePyramid)``.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
    slots: Dict[Tuple[int, int, int], Tuple[float, np.ndarray, int]] = {}
    last = spec.num_levels - 1

    def put(level, cell, score, box, cat):
        # an occupied cell moves the prediction to the nearest free one
        cell = _free_cell(level, cell, spec.grid(level), slots)
        if cell is not None:
            slots[(level,) + cell] = (score, box, cat)

    homes = []
    for i in range(len(gts)):
        box = gts.boxes[i]
        cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
        side = max(box[2] - box[0], box[3] - box[1])
        level = min(level_of_size(side, spec.level_ranges), last)
        home = _cell_of(cx, cy, spec.strides[level], spec.grid(level))
        top = rng.uniform(cfg.score_low, cfg.score_high)
        homes.append((level, home, top))
        put(level, home, top, _jitter(rng, box, cfg.loc_noise), int(gts.categories[i]))

    for i, (level, home, top) in enumerate(homes):
        box = gts.boxes[i]
        cat = int(gts.categories[i])
        cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
        grid = spec.grid(level)
        for m in range(1, cfg.duplicates):
            score = top * cfg.decay ** m
            dup_box = _jitter(rng, box, cfg.jitter)
            neighbours = [lv for lv in (level - 1, level + 1) if 0 <= lv <= last]
            if neighbours and rng.random() < cfg.leak:
                lv = neighbours[int(rng.integers(len(neighbours)))]
                put(lv, _cell_of(cx, cy, spec.strides[lv], spec.grid(lv)), score, dup_box, cat)
                continue
            cell = home
            for _ in range(10):
                dr, dc = rng.integers(-cfg.spread, cfg.spread + 1, 2)
                cell = (min(max(home[0] + dr, 0), grid[0] - 1), min(max(home[1] + dc, 0), grid[1] - 1))
                if cell != home:
                    break
            put(level, cell, score, dup_box, cat)

    if not slots:
        preds = PredictionSet.empty(num_classes)
        return preds, render_scores(preds, spec, num_classes, cfg.blob_sigma)
    keys = sorted(slots)
    scores = np.zeros((len(keys), num_classes))
    boxes = np.zeros((len(keys), 4))
    for j, key in enumerate(keys):
        score, box, cat = slots[key]
        scores[j, cat] = score
        boxes[j] = box
    levels = np.array([k[0] for k in keys])
    cells = np.array([k[1:] for k in keys])
    preds = PredictionSet(scores, boxes, levels, cells, np.asarray(spec.strides)[levels])
    pyramid = render_scores(preds, spec, num_classes, cfg.blob_sigma)
    mask = preds.scores > 0
    for j in range(len(preds)):
        for k in np.flatnonzero(mask[j]):
            preds.scores[j, k] = pyramid.levels[levels[j]][k, cells[j, 0], cells[j, 1]]
    return preds, pyramid


def hard_3dmf_keep(preds: PredictionSet, scores: FeaturePyramid,
                   params: FilterParams = FilterParams()) -> np.ndarray:
    """Predictions whose positive-score cell equals its 3D tube maximum."""
    peaks = peak_mask(scores, params)
    keep = []
    for j in range(len(preds)):
        r, c = preds.cells[j]
        lv = preds.levels[j]
        ks = np.flatnonzero(preds.scores[j] > 0)
        if ks.size and any(peaks[lv][k, r, c] for k in ks):
            keep.append(j)
    return np.asarray(keep, dtype=np.int64)


# ---------------------------------------------------------------------------
# study

@dataclass
class SimImage:
    image_id: int
    gts: GroundTruthSet
    preds: PredictionSet
    scores: FeaturePyramid


def simulate(scene_cfg: SceneConfig, oracle_cfg: OracleConfig, n_images: int,
             spec: Optional[PyramidSpec] = None) -> List[SimImage]:
    spec = spec or PyramidSpec(image_size=scene_cfg.image_size)
    scenes = gen_scenes(scene_cfg, n_images)
    rngs = image_rngs(oracle_cfg.seed, n_images)

    def one(i):
        preds, pyr = oracle_predict(scenes[i], spec, oracle_cfg, scene_cfg.num_classes, rngs[i])
        return SimImage(i, scenes[i], preds, pyr)

    return _map(one, range(n_images))


def keep_set(image: SimImage, rule: str, rule_cfg: RuleConfig = RuleConfig()) -> np.ndarray:
    """Predictions the simulated detector outputs when trained with ``rule``."""
    if rule in ONE_TO_ONE:
        return assign(rule, image.gts, image.preds, rule_cfg).foreground
    return np.arange(len(image.preds))


def detections_for(images: Sequence[SimImage], keeps: Sequence[np.ndarray]) -> Detections:
    return Detections.concat(Detections.from_predictions(im.preds, im.image_id, idx=k)
                             for im, k in zip(images, keeps))


def gt_map(images: Sequence[SimImage]) -> Dict[int, GroundTruthSet]:
    return {im.image_id: im.gts for im in images}


STUDY_COLUMNS = ["rule", "assignment", "nms", "mAP_nms", "mAP_raw", "delta_mAP", "AP50_nms",
                 "AP50_raw", "AR_nms", "AR_raw", "delta_AR", "kept", "after_nms"]


@dataclass
class StudyReport:
    rows: List[Dict[str, object]] = field(default_factory=list)

    def to_csv(self) -> str:
        return rows_to_csv(self.rows, STUDY_COLUMNS)

    def row(self, rule: str, nms: Optional[str] = None) -> Dict[str, object]:
        for r in self.rows:
            if r["rule"] == rule and (nms is None or r["nms"] == nms):
                return r
        raise KeyError((rule, nms))

    def summary(self) -> str:
        lines = [f"{'rule':<14}{'nms':<16}{'mAP w/':>9}{'mAP w/o':>9}{'delta':>9}"
                 f"{'mAR w/':>9}{'mAR w/o':>9}{'delta':>9}"]
        for r in self.rows:
            lines.append(f"{r['rule']:<14}{r['nms']:<16}"
                         + "".join(f"{format_float(r[c]):>9.9}" for c in
                                   ("mAP_nms", "mAP_raw", "delta_mAP", "AR_nms", "AR_raw",
                                    "delta_AR")))
        return "\n".join(lines)


def run_study(scene_cfg: SceneConfig, oracle_cfg: OracleConfig, rules: Sequence[str],
              nms_cfgs: Sequence[NmsConfig] = (NmsConfig(),), n_images: int = 100,
              rule_cfg: RuleConfig = RuleConfig(), images: Optional[List[SimImage]] = None,
              ) -> StudyReport:
    """AP/AR with and without each NMS config for every rule's keep-set."""
    if images is None:
        images = simulate(scene_cfg, oracle_cfg, n_images)
    gts = gt_map(images)
    report = StudyReport()
    for rule in rules:
        keeps = _map(lambda im: keep_set(im, rule, rule_cfg), images)
        dets = detections_for(images, keeps)
        raw = evaluate(dets, gts)
        for cfg in nms_cfgs:
            after = apply_nms(dets, cfg)
            res = evaluate(after, gts)
            report.rows.append({
                "rule": rule, "assignment": "one_to_one" if rule in ONE_TO_ONE else "one_to_many",
                "nms": cfg.config_id, "mAP_nms": res.mAP, "mAP_raw": raw.mAP,
                "delta_mAP": raw.mAP - res.mAP, "AP50_nms": res.AP50, "AP50_raw": raw.AP50,
                "AR_nms": res.AR, "AR_raw": raw.AR, "delta_AR": raw.AR - res.AR,
                "kept": len(dets), "after_nms": len(after)})
    return report
