"""File formats: COCO annotations, detection/prediction JSON, PGM heatmaps.

Validation problems raise ``ValueError``; missing or unreadable files raise
``OSError`` carrying the path.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assign_rules import FCOS_LEVEL_RANGES, level_of_size
from .detections import Detections
from .geometry import GroundTruthSet, PredictionSet

DEFAULT_STRIDES = (8.0, 16.0, 32.0, 64.0, 128.0)


def _load_json(path, empty=None):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if empty is not None and not text.strip():
        return empty
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")


def _dump_json(path, obj) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# COCO annotations

@dataclass
class CocoDataset:
    """COCO annotations held as arrays.

    Boxes keep the original ``[x, y, w, h]`` numbers so export reproduces the
    input exactly; ``ground_truths`` converts to corner form on demand.
    Category ids map to contiguous indices in ascending id order.
    """

    images: List[Dict[str, int]] = field(default_factory=list)
    categories: List[Dict[str, object]] = field(default_factory=list)
    ann_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ann_images: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ann_categories: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    bbox_xywh: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    @property
    def category_ids(self) -> List[int]:
        return [int(c["id"]) for c in self.categories]

    @property
    def image_ids(self) -> List[int]:
        return [int(im["id"]) for im in self.images]

    def category_index(self, category_id: int) -> int:
        ids = self.category_ids
        if category_id not in ids:
            raise ValueError(f"unknown category_id {category_id}")
        return ids.index(category_id)

    def ground_truths(self) -> Dict[int, GroundTruthSet]:
        out = {}
        lookup = {cid: i for i, cid in enumerate(self.category_ids)}
        for image_id in self.image_ids:
            sel = self.ann_images == image_id
            xywh = self.bbox_xywh[sel]
            boxes = np.concatenate([xywh[:, :2], xywh[:, :2] + xywh[:, 2:]], axis=1)
            cats = np.array([lookup[int(c)] for c in self.ann_categories[sel]], dtype=np.int64)
            out[image_id] = GroundTruthSet(boxes, cats, self.ann_ids[sel])
        return out

    def to_json(self) -> dict:
        anns = [{"id": int(a), "image_id": int(i), "category_id": int(c),
                 "bbox": [float(v) for v in b], "area": float(b[2] * b[3]), "iscrowd": 0}
                for a, i, c, b in zip(self.ann_ids, self.ann_images, self.ann_categories,
                                      self.bbox_xywh)]
        return {"images": self.images, "annotations": anns, "categories": self.categories}

    @classmethod
    def from_json(cls, obj) -> "CocoDataset":
        if not isinstance(obj, dict):
            raise ValueError("COCO annotations must be a JSON object")
        for key in ("images", "annotations", "categories"):
            if not isinstance(obj.get(key), list):
                raise ValueError(f"COCO annotations need a list field {key!r}")
        try:
            images = [{"id": int(im["id"]), "width": int(im["width"]), "height": int(im["height"])}
                      for im in obj["images"]]
            cats = sorted(({"id": int(c["id"]), "name": str(c.get("name", c["id"]))}
                           for c in obj["categories"]), key=lambda c: c["id"])
            anns = obj["annotations"]
            ids = [int(a.get("id", n + 1)) for n, a in enumerate(anns)]
            img = [int(a["image_id"]) for a in anns]
            cat = [int(a["category_id"]) for a in anns]
            bbox = np.array([[float(v) for v in a["bbox"]] for a in anns], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed COCO record: missing or bad field {exc}") from None
        bbox = bbox.reshape(-1, 4)
        known_images = {im["id"] for im in images}
        known_cats = {c["id"] for c in cats}
        for n, (i, c) in enumerate(zip(img, cat)):
            if i not in known_images:
                raise ValueError(f"annotation {n} refers to unknown image_id {i}")
            if c not in known_cats:
                raise ValueError(f"annotation {n} refers to unknown category_id {c}")
        if np.any(bbox[:, 2:] < 0) or not np.all(np.isfinite(bbox)):
            raise ValueError("COCO bbox widths and heights must be finite and non-negative")
        return cls(images, cats, np.array(ids, dtype=np.int64), np.array(img, dtype=np.int64),
                   np.array(cat, dtype=np.int64), bbox)

    @classmethod
    def from_ground_truths(cls, gts: Sequence[GroundTruthSet], image_size: int,
                           num_classes: int) -> "CocoDataset":
        """Export scenes; category index ``k`` becomes id ``k + 1``."""
        images = [{"id": i, "width": image_size, "height": image_size} for i in range(len(gts))]
        cats = [{"id": k + 1, "name": f"class{k}"} for k in range(num_classes)]
        ids, img, cat, xywh = [], [], [], []
        for i, g in enumerate(gts):
            for b, c in zip(g.boxes, g.categories):
                ids.append(len(ids) + 1)
                img.append(i)
                cat.append(int(c) + 1)
                xywh.append([b[0], b[1], b[2] - b[0], b[3] - b[1]])
        return cls(images, cats, np.array(ids, dtype=np.int64), np.array(img, dtype=np.int64),
                   np.array(cat, dtype=np.int64), np.array(xywh, dtype=np.float64).reshape(-1, 4))

    def same_state(self, other: "CocoDataset") -> bool:
        return (self.images == other.images and self.categories == other.categories
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("ann_ids", "ann_images", "ann_categories", "bbox_xywh")))


def read_coco(path) -> CocoDataset:
    return CocoDataset.from_json(_load_json(path))


def write_coco(path, dataset: CocoDataset) -> None:
    _dump_json(path, dataset.to_json())


# ---------------------------------------------------------------------------
# detections / predictions

def project_center(boxes: np.ndarray, strides: Sequence[float] = DEFAULT_STRIDES,
                   level_ranges=FCOS_LEVEL_RANGES) -> Tuple[np.ndarray, np.ndarray]:
    """Center-rule placement: level from the longer side, cell holding the center."""
    levels = np.zeros(len(boxes), dtype=np.int64)
    cells = np.zeros((len(boxes), 2), dtype=np.int64)
    for j, b in enumerate(boxes):
        lv = min(level_of_size(max(b[2] - b[0], b[3] - b[1]), level_ranges), len(strides) - 1)
        s = strides[lv]
        levels[j] = lv
        cells[j] = (max(int(np.floor((b[1] + b[3]) / 2 / s)), 0),
                    max(int(np.floor((b[0] + b[2]) / 2 / s)), 0))
    return levels, cells


def _parse_records(obj, dataset: CocoDataset, strides):
    if not isinstance(obj, list):
        raise ValueError("detections must be a JSON array")
    k = len(dataset.categories)
    image_ids, boxes, scores, levels, cells = [], [], [], [], []
    placed = []
    for n, rec in enumerate(obj):
        try:
            image_ids.append(int(rec["image_id"]))
            x, y, w, h = (float(v) for v in rec["bbox"])
            if "scores" in rec:
                vec = np.array([float(v) for v in rec["scores"]], dtype=np.float64)
                if vec.shape != (k,):
                    raise ValueError(f"record {n}: 'scores' needs {k} entries")
            else:
                vec = np.zeros(k)
                vec[dataset.category_index(int(rec["category_id"]))] = float(rec["score"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"detection record {n}: missing or bad field {exc}") from None
        if w < 0 or h < 0:
            raise ValueError(f"detection record {n}: negative bbox size")
        boxes.append([x, y, x + w, y + h])
        scores.append(vec)
        has_level = "level" in rec and "cell" in rec
        placed.append(has_level)
        levels.append(int(rec["level"]) if has_level else 0)
        cells.append([int(v) for v in rec["cell"]] if has_level else [0, 0])
        if has_level and not 0 <= levels[-1] < len(strides):
            raise ValueError(f"detection record {n}: level {levels[-1]} out of range")
    boxes = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    levels = np.array(levels, dtype=np.int64)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 2)
    missing = ~np.array(placed, dtype=bool)
    if missing.any():
        lv, cl = project_center(boxes[missing], strides)
        levels[missing] = lv
        cells[missing] = cl
    scores = np.array(scores, dtype=np.float64).reshape(-1, k)
    if not np.all(np.isfinite(scores)):
        raise ValueError("detection scores must be finite")
    return np.array(image_ids, dtype=np.int64), boxes, scores, levels, cells


def read_detections(path, dataset: CocoDataset, strides=DEFAULT_STRIDES) -> Detections:
    """JSON array of ``{image_id, category_id, bbox, score, level?, cell?}``.

    When ``level``/``cell`` are absent they are inferred by Center-rule
    projection (``project_center``).
    """
    ids, boxes, scores, levels, cells = _parse_records(_load_json(path), dataset, strides)
    j, c = np.nonzero(scores > 0) if len(scores) else (np.zeros(0, int), np.zeros(0, int))
    st = np.asarray(strides, dtype=np.float64)
    return Detections(ids[j], boxes[j], scores[j, c], c, levels[j], cells[j], st[levels[j]])


def read_predictions(path, dataset: CocoDataset, strides=DEFAULT_STRIDES) -> Dict[int, PredictionSet]:
    """Per-image prediction sets. A record may carry a full ``scores`` vector
    instead of ``category_id``/``score``. An empty file means no predictions."""
    ids, boxes, scores, levels, cells = _parse_records(_load_json(path, empty=[]), dataset, strides)
    if np.any((scores < 0) | (scores > 1)):
        raise ValueError("prediction scores must lie in [0, 1]")
    st = np.asarray(strides, dtype=np.float64)
    out = {}
    k = len(dataset.categories)
    for image_id in dataset.image_ids:
        sel = np.flatnonzero(ids == image_id)
        if sel.size == 0:
            out[image_id] = PredictionSet.empty(k)
            continue
        out[image_id] = PredictionSet(scores[sel], boxes[sel], levels[sel], cells[sel], st[levels[sel]])
    unknown = set(ids.tolist()) - set(dataset.image_ids)
    if unknown:
        raise ValueError(f"predictions refer to unknown image_id {min(unknown)}")
    return out


def detections_to_json(dets: Detections, category_ids: Sequence[int]) -> List[dict]:
    out = []
    for i in range(len(dets)):
        b = dets.boxes[i]
        out.append({"image_id": int(dets.image_ids[i]),
                    "category_id": int(category_ids[dets.categories[i]]),
                    "bbox": [float(b[0]), float(b[1]), float(b[2] - b[0]), float(b[3] - b[1])],
                    "score": float(dets.scores[i]), "level": int(dets.levels[i]),
                    "cell": [int(dets.cells[i, 0]), int(dets.cells[i, 1])]})
    return out


def write_detections(path, dets: Detections, category_ids: Sequence[int]) -> None:
    _dump_json(path, detections_to_json(dets, category_ids))


def write_json(path, obj) -> None:
    _dump_json(path, obj)


# ---------------------------------------------------------------------------
# heatmaps

def pgm_bytes(grid: np.ndarray) -> bytes:
    """Binary 8-bit PGM of a 2-D array scaled so its maximum maps to 255."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("heatmaps are 2-D")
    top = grid.max() if grid.size else 0.0
    scaled = np.zeros(grid.shape) if top <= 0 else np.clip(grid, 0, None) / top * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    h, w = grid.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path, grid: np.ndarray) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(pgm_bytes(grid))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def write_heatmaps(directory, pyramid, prefix: str) -> List[str]:
    """One PGM per level, channels collapsed by max."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for s, grid in enumerate(pyramid.levels):
        name = f"{prefix}_level{s}.pgm"
        write_pgm(os.path.join(directory, name), grid.max(axis=0))
        names.append(name)
    return names
