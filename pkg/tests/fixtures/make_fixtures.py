"""Regenerate the JSON fixtures in this directory.

Expected assignments are computed here with scalar loops and exhaustive
permutation search; nothing is imported from the package.

    python3 tests/fixtures/make_fixtures.py
"""
import itertools
import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
STRIDES = (8, 16, 32, 64, 128)
ALPHA, RADIUS = 0.8, 1.5


def iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def quality(gt, cat, pred):
    s = STRIDES[pred["level"]]
    x = (pred["cell"][1] + 0.5) * s
    y = (pred["cell"][0] + 0.5) * s
    cx, cy = (gt[0] + gt[2]) / 2, (gt[1] + gt[3]) / 2
    inside = gt[0] <= x <= gt[2] and gt[1] <= y <= gt[3]
    near = abs(x - cx) <= RADIUS * s and abs(y - cy) <= RADIUS * s
    if not (inside and near):
        return 0.0
    bx, by, bw, bh = pred["bbox"]
    p = pred["scores"][cat]
    return p ** (1 - ALPHA) * iou(gt, (bx, by, bx + bw, by + bh)) ** ALPHA


def best_pairs(q):
    """Maximum total quality; among optima the lexicographically smallest."""
    g, n = len(q), len(q[0])
    best, best_perm = -1.0, None
    for perm in itertools.permutations(range(n), g):
        total = sum(q[i][j] for i, j in enumerate(perm))
        if total > best + 1e-12:
            best, best_perm = total, perm
    return [[i, j] for i, j in enumerate(best_perm) if q[i][j] > 0]


def main():
    rng = random.Random(20240611)
    images, anns, preds, expected = [], [], [], {}
    cats = [{"id": 3, "name": "cat"}, {"id": 7, "name": "dog"}]
    ann_id = 100
    for image_id in (1, 2, 5):
        images.append({"id": image_id, "width": 128, "height": 128})
        gts = []
        for _ in range(rng.randint(2, 3)):
            w, h = rng.uniform(24, 48), rng.uniform(24, 48)
            x, y = rng.uniform(0, 128 - w), rng.uniform(0, 128 - h)
            cat = rng.randint(0, 1)
            ann_id += 1
            anns.append({"id": ann_id, "image_id": image_id, "category_id": cats[cat]["id"],
                         "bbox": [round(x, 2), round(y, 2), round(w, 2), round(h, 2)]})
            gts.append(((round(x, 2), round(y, 2), round(x, 2) + round(w, 2),
                         round(y, 2) + round(h, 2)), cat))
        # level-1 predictions (stride 16) on an 8x8 grid around every gt centre
        mine = []
        cells = set()
        for (b, _) in gts:
            cr, cc = int((b[1] + b[3]) / 2 // 16), int((b[0] + b[2]) / 2 // 16)
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    r, c = cr + dr, cc + dc
                    if 0 <= r < 8 and 0 <= c < 8:
                        cells.add((r, c))
        for r, c in sorted(cells):
            cx, cy = (c + 0.5) * 16, (r + 0.5) * 16
            w, h = rng.uniform(20, 50), rng.uniform(20, 50)
            rec = {"image_id": image_id, "level": 1, "cell": [r, c],
                   "bbox": [round(cx - w / 2, 3), round(cy - h / 2, 3), round(w, 3), round(h, 3)],
                   "scores": [round(rng.uniform(0.05, 0.95), 3) for _ in cats]}
            mine.append(rec)
        q = [[quality(b, cat, p) for p in mine] for b, cat in gts]
        expected[str(image_id)] = best_pairs(q)
        preds.extend(mine)
    with open(os.path.join(HERE, "coco3.json"), "w") as fh:
        json.dump({"images": images, "annotations": anns, "categories": cats}, fh, indent=1)
    with open(os.path.join(HERE, "preds3.json"), "w") as fh:
        json.dump(preds, fh, indent=1)
    with open(os.path.join(HERE, "assign3_poto.json"), "w") as fh:
        json.dump(expected, fh, indent=1, sort_keys=True)

    # evaluation fixtures: one image, two gts of one class
    two = {"images": [{"id": 1, "width": 64, "height": 64}],
           "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
                           {"id": 2, "image_id": 1, "category_id": 1, "bbox": [20, 20, 10, 10]}],
           "categories": [{"id": 1, "name": "thing"}]}
    perfect = [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.9},
               {"image_id": 1, "category_id": 1, "bbox": [20, 20, 10, 10], "score": 0.8}]
    dup = [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.9},
           {"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10.5], "score": 0.85},
           {"image_id": 1, "category_id": 1, "bbox": [20, 20, 10, 10], "score": 0.8}]
    for name, obj in (("coco_two.json", two), ("dets_perfect.json", perfect),
                      ("dets_duplicate.json", dup)):
        with open(os.path.join(HERE, name), "w") as fh:
            json.dump(obj, fh, indent=1)


if __name__ == "__main__":
    main()
