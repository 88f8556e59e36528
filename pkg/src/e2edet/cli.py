"""Command-line entry point: ``e2edet <command> [options]``.

Exit codes: 0 success, 1 invalid input or failed check, 2 file I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .assign_rules import ONE_TO_ONE, RULES, RuleConfig
from .config import RunConfig, parse_flat
from .formats import (CocoDataset, read_coco, read_detections, read_predictions, write_coco,
                      write_heatmaps, write_json)
from .gradcheck import check_dmf_gradients
from .metrics import evaluate
from .nms import STUDY_COLUMNS as NMS_COLUMNS
from .nms import STUDY_CONFIGS, NmsConfig, apply_nms, format_float, nms_study, rows_to_csv
from .pyramid import FilterParams, hard_3dmf, max_filter_3d, read_pyramid, write_pyramid
from .quality import FUSIONS, PRIORS
from .sim import detections_for, gt_map, hard_3dmf_keep, run_study, simulate
from .estimators import LabelAssigner

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage mistakes count as invalid input (exit 1), not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {path}: {exc.strerror or exc}") from exc


def _nms_from_args(args) -> NmsConfig:
    window = None if args.spatial_range in (None, "inf") else int(args.spatial_range)
    return NmsConfig(args.iou_threshold, not args.per_scale, window, args.score_floor)


# ---------------------------------------------------------------------------
# commands

def cmd_assign(args) -> int:
    dataset = read_coco(args.annotations)
    preds = read_predictions(args.predictions, dataset)
    if all(len(p) == 0 for p in preds.values()):
        _warn(f"{args.predictions} holds no predictions; every ground truth is unmatched")
    est = LabelAssigner(args.rule, args.alpha, args.prior, args.fusion, args.radius, args.k)
    gts = dataset.ground_truths()
    images, fg, total_gts, matched = [], 0, 0, set()
    for image_id in dataset.image_ids:
        labels = est.fit_predict(preds[image_id], gts[image_id])
        t = est.targets_
        pairs = [[int(i), int(j)] for i, j in t.pairs()]
        gt_ids = gts[image_id].ids
        images.append({"image_id": image_id, "pairs": pairs,
                       "gt_annotation_ids": [int(gt_ids[i]) for i, _ in pairs],
                       "num_predictions": len(labels), "num_foreground": t.num_foreground,
                       "unmatched_gts": sorted({*range(len(gt_ids))} - {i for i, _ in pairs})})
        fg += t.num_foreground
        total_gts += len(gt_ids)
        matched |= {(image_id, i) for i, _ in pairs}
    out = {"rule": args.rule, "one_to_one": args.rule in ONE_TO_ONE,
           "params": est.get_params(), "images": images,
           "stats": {"images": len(images), "ground_truths": total_gts,
                     "foreground": fg, "matched_gts": len(matched)}}
    if args.out:
        write_json(args.out, out)
    print(f"rule={args.rule} images={len(images)} gts={total_gts} "
          f"foreground={fg} matched_gts={len(matched)}")
    for im in images:
        print(f"image {im['image_id']}: " + " ".join(f"{i}->{j}" for i, j in im["pairs"]))
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = read_coco(args.annotations)
    dets = read_detections(args.detections, dataset)
    if args.nms:
        dets = apply_nms(dets, _nms_from_args(args))
    res = evaluate(dets, dataset.ground_truths(), interpolation=args.interpolation)
    cat_ids = dataset.category_ids
    row = {"mAP": res.mAP, "AP50": res.AP50, "AP75": res.AP75, "AR": res.AR,
           "duplicates": res.duplicate_count, "detections": len(dets)}
    table = rows_to_csv([row], list(row))
    per_class = {str(cat_ids[c]): v for c, v in res.per_class.items()}
    if args.out:
        write_json(args.out, {**row, "interpolation": args.interpolation,
                              "per_class": per_class})
    if args.csv:
        _write_text(args.csv, table)
    print(f"{'metric':<12}value")
    for k, v in row.items():
        print(f"{k:<12}{format_float(v)}")
    for c, v in per_class.items():
        print(f"{'AP[' + c + ']':<12}{format_float(v)}")
    return EXIT_OK


def cmd_filter(args) -> int:
    pyramid = read_pyramid(args.input)
    params = FilterParams(args.tau, args.phi)
    out = hard_3dmf(pyramid, params) if args.mode == "hard" else max_filter_3d(pyramid, params)
    write_pyramid(args.output, out)
    if args.heatmaps:
        write_heatmaps(args.heatmaps, out, args.mode)
    print(f"filtered {len(out)} levels with tau={args.tau} phi={args.phi} mode={args.mode}")
    return EXIT_OK


def cmd_nms_study(args) -> int:
    dataset = read_coco(args.annotations)
    dets = read_detections(args.detections, dataset)
    configs = [NmsConfig(args.iou_threshold, c.across_scales, c.spatial_range, args.score_floor)
               for c in STUDY_CONFIGS]
    text = rows_to_csv(nms_study(dets, dataset.ground_truths(), configs), NMS_COLUMNS)
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def load_run_config(path: Optional[str], overrides: Sequence[str]) -> RunConfig:
    values = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                values.update(parse_flat(fh.read()))
        except OSError as exc:
            raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return RunConfig().with_values(values)


def cmd_simulate(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.n_images is not None:
        overrides.append(f"n_images={args.n_images}")
    cfg = load_run_config(args.config, overrides)
    out = args.out
    _ensure_dir(out)
    _write_text(os.path.join(out, "run_config.txt"), cfg.dumps())

    scene_cfg = cfg.scene_config()
    images = simulate(scene_cfg, cfg.oracle_config(), cfg.n_images)
    rule_cfg = RuleConfig(quality=cfg.quality, radius=cfg.quality.radius)
    report = run_study(scene_cfg, cfg.oracle_config(), cfg.rules, (cfg.nms,), rule_cfg=rule_cfg,
                       images=images)
    _write_text(os.path.join(out, "study.csv"), report.to_csv())

    # post-processing comparison on the raw oracle output
    gts = gt_map(images)
    raw = detections_for(images, [np.arange(len(im.preds)) for im in images])
    hard = detections_for(images, [hard_3dmf_keep(im.preds, im.scores, cfg.filter) for im in images])
    post_rows = []
    for name, dets in (("none", raw), ("nms", apply_nms(raw, cfg.nms)), ("hard_3dmf", hard)):
        res = evaluate(dets, gts)
        post_rows.append({"method": name, "mAP": res.mAP, "AP50": res.AP50, "AR": res.AR,
                          "duplicates": res.duplicate_count, "kept": len(dets)})
    post_cols = ["method", "mAP", "AP50", "AR", "duplicates", "kept"]
    _write_text(os.path.join(out, "postprocess.csv"), rows_to_csv(post_rows, post_cols))

    ms_images = simulate(scene_cfg, cfg.ms_oracle_config(), cfg.n_images)
    ms_dets = detections_for(ms_images, [np.arange(len(im.preds)) for im in ms_images])
    configs = [NmsConfig(cfg.nms.iou_threshold, c.across_scales, c.spatial_range,
                         cfg.nms.score_floor) for c in STUDY_CONFIGS]
    nms_rows = nms_study(ms_dets, gt_map(ms_images), configs)
    _write_text(os.path.join(out, "nms_study.csv"), rows_to_csv(nms_rows, NMS_COLUMNS))

    dataset = CocoDataset.from_ground_truths([im.gts for im in images], scene_cfg.image_size,
                                             scene_cfg.num_classes)
    write_coco(os.path.join(out, "scenes.json"), dataset)
    heat_dir = os.path.join(out, "heatmaps")
    for im in images[:cfg.heatmap_images]:
        write_heatmaps(heat_dir, im.scores, f"image{im.image_id}_scores")
        write_heatmaps(heat_dir, hard_3dmf(im.scores, cfg.filter), f"image{im.image_id}_hard3dmf")

    summary = [report.summary(), "", rows_to_csv(post_rows, post_cols).rstrip(), "",
               rows_to_csv(nms_rows, NMS_COLUMNS).rstrip()]
    text = "\n".join(summary) + "\n"
    _write_text(os.path.join(out, "summary.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


def _parse_sizes(text: str):
    try:
        sizes = [tuple(int(v) for v in part.lower().split("x")) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"--sizes expects e.g. 8x8,4x4 (got {text!r})") from None
    if not sizes or any(len(s) != 2 or min(s) < 1 for s in sizes):
        raise UsageError(f"--sizes expects e.g. 8x8,4x4 (got {text!r})")
    return sizes


def cmd_gradcheck(args) -> int:
    report = check_dmf_gradients(args.seed, _parse_sizes(args.sizes), args.channels, args.classes,
                                 args.step, args.tolerance, FilterParams(args.tau, args.phi))
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_INVALID


# ---------------------------------------------------------------------------
# parser

def _add_nms_args(p, with_toggle: bool) -> None:
    if with_toggle:
        p.add_argument("--nms", action="store_true", help="apply NMS before evaluating")
    p.add_argument("--iou-threshold", type=float, default=0.6)
    p.add_argument("--per-scale", action="store_true", help="only same-level pairs suppress")
    p.add_argument("--spatial-range", default=None, help="odd window in cells, or inf")
    p.add_argument("--score-floor", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="e2edet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"e2edet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("assign", help="run a label-assignment rule on COCO data")
    p.add_argument("--annotations", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--rule", default="poto", choices=list(RULES))
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--prior", default="center_sampling", choices=PRIORS)
    p.add_argument("--fusion", default="mul", choices=FUSIONS)
    p.add_argument("--radius", type=float, default=1.5)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("eval", help="COCO-style AP/AR of a detection file")
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", required=True)
    _add_nms_args(p, with_toggle=True)
    p.add_argument("--interpolation", default="101", choices=("101", "all"))
    p.add_argument("--out", help="JSON result")
    p.add_argument("--csv", help="one-row CSV result")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("filter", help="3D max filtering of a pyramid dump")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tau", type=int, default=2)
    p.add_argument("--phi", type=int, default=3)
    p.add_argument("--mode", default="soft", choices=("soft", "hard"))
    p.add_argument("--heatmaps", help="directory for per-level PGM heatmaps")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", help="synthetic assignment and NMS study")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-images", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("nms-study", help="AP under the NMS range / scale variants")
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.6)
    p.add_argument("--score-floor", type=float, default=0.05)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_nms_study)

    p = sub.add_parser("gradcheck", help="finite-difference check of the filtering module")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="8x8,4x4,2x2", help="per-level HxW, finest first")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--tau", type=int, default=2)
    p.add_argument("--phi", type=int, default=3)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
