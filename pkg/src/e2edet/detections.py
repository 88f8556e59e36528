"""Flat detection lists shared by NMS, evaluation and the simulator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .geometry import PredictionSet, as_boxes


@dataclass
class Detections:
    image_ids: np.ndarray
    boxes: np.ndarray
    scores: np.ndarray
    categories: np.ndarray
    levels: Optional[np.ndarray] = None
    cells: Optional[np.ndarray] = None
    strides: Optional[np.ndarray] = None

    def __post_init__(self):
        self.boxes = as_boxes(self.boxes)
        n = len(self.boxes)
        self.image_ids = np.broadcast_to(np.asarray(self.image_ids, dtype=np.int64), (n,)).copy()
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.categories = np.broadcast_to(np.asarray(self.categories, dtype=np.int64), (n,)).copy()
        if self.levels is None:
            self.levels = np.zeros(n, dtype=np.int64)
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        if self.cells is None:
            self.cells = np.zeros((n, 2), dtype=np.int64)
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        if self.strides is None:
            self.strides = np.ones(n)
        self.strides = np.broadcast_to(np.asarray(self.strides, dtype=np.float64), (n,)).copy()
        for name in ("scores", "levels", "cells"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"detection field {name!r} has wrong length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("detection scores must be finite")

    def __len__(self):
        return len(self.scores)

    @classmethod
    def empty(cls) -> "Detections":
        return cls(np.zeros(0), np.zeros((0, 4)), np.zeros(0), np.zeros(0))

    def select(self, idx) -> "Detections":
        idx = np.asarray(idx)
        return Detections(self.image_ids[idx], self.boxes[idx], self.scores[idx],
                          self.categories[idx], self.levels[idx], self.cells[idx],
                          self.strides[idx])

    def for_image(self, image_id: int) -> "Detections":
        return self.select(np.flatnonzero(self.image_ids == image_id))

    @staticmethod
    def concat(parts: Iterable["Detections"]) -> "Detections":
        parts = [p for p in parts if len(p)]
        if not parts:
            return Detections.empty()
        return Detections(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("image_ids", "boxes", "scores", "categories", "levels",
                                      "cells", "strides")))

    @classmethod
    def from_predictions(cls, preds: PredictionSet, image_id: int = 0,
                         score_floor: float = 0.0, idx=None) -> "Detections":
        """One detection per (prediction, class) with score above ``score_floor``."""
        if idx is not None:
            preds = preds.subset(idx)
        j, c = np.nonzero(preds.scores > score_floor)
        return cls(np.full(len(j), image_id), preds.boxes[j], preds.scores[j, c], c,
                   preds.levels[j], preds.cells[j], preds.strides[j])
