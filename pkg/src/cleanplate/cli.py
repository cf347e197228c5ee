"""Command line interface.

Subcommands:
  run    detect and remove dynamic content from an image directory
  synth  render a synthetic evaluation scene with ground truth
  eval   score a run's outputs against a scene's ground truth

Exit codes: 0 success, 1 runtime failure (unreadable inputs, degenerate
geometry, I/O), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np
from PIL import Image

from . import evaluation, scan_engine
from .config import Config, ConfigError, load_config
from .epipolar import EpipolarError, dump_diagnostics
from .image_set import ImageSetError, load_image_set, write_outputs

logger = logging.getLogger(__name__)

# Non-finite metric values are capped here for JSON output.
PSNR_CAP_DB = 999.0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cleanplate",
        description="Remove moving objects from multi-view image sets.")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process an image directory")
    p_run.add_argument("--input", required=True,
                       help="directory of views (2+ images)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--ref", default="0",
                       help="reference view: index or file name")
    p_run.add_argument("--config", default=None,
                       help="JSON file with configuration values")
    p_run.add_argument("--cache-dir", default=None,
                       help="descriptor field cache directory")
    p_run.add_argument("--dump-geometry", action="store_true",
                       help="write per-source geometry diagnostics JSON")
    p_run.add_argument("--no-normalize-coords", action="store_true",
                       help="evaluate epipolar distances in raw pixels")
    p_run.add_argument("--refresh-neighbor-descriptors",
                       action="store_true",
                       help="recompute descriptors around replaced pixels "
                            "from updated content")
    for flag, typ in (("--patch-size", int), ("--t-r", float),
                      ("--sigma-e", float), ("--dbscan-eps", float),
                      ("--min-pts", int), ("--pm-iters", int),
                      ("--max-scans", int), ("--seed", int),
                      ("--snapshot-every", int)):
        p_run.add_argument(flag, type=typ, default=None)

    p_synth = sub.add_parser("synth", help="render a synthetic scene")
    p_synth.add_argument("--preset", required=True,
                         choices=["static-null", "square-walk",
                                  "glyph-walk"])
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--width", type=int, default=320)
    p_synth.add_argument("--height", type=int, default=240)
    p_synth.add_argument("--views", type=int, default=5)

    p_eval = sub.add_parser("eval", help="score results against a scene")
    p_eval.add_argument("--scene", required=True,
                        help="scene directory written by synth")
    p_eval.add_argument("--result", required=True,
                        help="output directory written by run")
    p_eval.add_argument("--out", default=None,
                        help="also write metrics JSON here")
    return parser


def _config_from_args(args: argparse.Namespace) -> Config:
    overrides = {
        "patch_size": args.patch_size,
        "t_r": args.t_r,
        "sigma_e": args.sigma_e,
        "dbscan_eps": args.dbscan_eps,
        "min_pts": args.min_pts,
        "pm_iters": args.pm_iters,
        "max_scans": args.max_scans,
        "seed": args.seed,
        "snapshot_every": args.snapshot_every,
    }
    if args.no_normalize_coords:
        overrides["normalize_coords"] = False
    if args.refresh_neighbor_descriptors:
        overrides["refresh_neighbor_descriptors"] = True
    return load_config(args.config, overrides)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    images = load_image_set(args.input, args.ref, cfg.patch_size)
    os.makedirs(args.out, exist_ok=True)

    snapshot_cb = None
    if cfg.snapshot_every > 0:
        def snapshot_cb(snap: scan_engine.Snapshot) -> None:
            name = f"snapshot_{snap.scan_index:02d}_{snap.decided:07d}.png"
            Image.fromarray(snap.image).save(os.path.join(args.out, name))

    result = scan_engine.run(images, cfg, snapshot_cb,
                             cache_dir=args.cache_dir)
    stem = images.reference_name
    mask_path, clean_path = write_outputs(
        result.dynamic_map.cumulative, result.cleaned, args.out, stem)
    written_path = os.path.join(args.out, f"{stem}_written.png")
    Image.fromarray((result.written_mask * np.uint8(255))).save(written_path)

    summary = {
        "reference": stem,
        "scans": result.scans,
        "seconds": result.seconds,
        "converged": result.converged,
        "per_scan_dynamic": result.per_scan_counts,
        "scan_directions": result.scan_directions,
        "dynamic_pixels": int(result.dynamic_map.cumulative.sum()),
        "config": cfg.to_dict(),
    }
    summary_path = os.path.join(args.out, "run_summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    if args.dump_geometry:
        dump_diagnostics(result.fundamentals,
                         os.path.join(args.out, "geometry.json"))
    print(mask_path)
    print(clean_path)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    params = evaluation.preset_params(args.preset, seed=args.seed,
                                      width=args.width, height=args.height,
                                      n_views=args.views)
    scene = evaluation.synth_scene(params)
    os.makedirs(args.out, exist_ok=True)
    evaluation.save_scene(scene, args.out)
    print(args.out)
    return 0


def _find_result_file(result_dir: str, suffix: str) -> str:
    hits = sorted(f for f in os.listdir(result_dir) if f.endswith(suffix))
    if not hits:
        raise EvaluationFileError(
            f"no *{suffix} file in {result_dir}; run the 'run' command "
            "first")
    return os.path.join(result_dir, hits[0])


class EvaluationFileError(Exception):
    """Raised when expected run outputs are missing from a result dir."""


def _finite(v: float) -> float:
    return v if math.isfinite(v) else PSNR_CAP_DB


def _cmd_eval(args: argparse.Namespace) -> int:
    params, masks, background = evaluation.load_scene_truth(args.scene)
    gt_mask = masks[params.reference_index]
    mask_path = _find_result_file(args.result, "_mask.png")
    clean_path = _find_result_file(args.result, "_clean.png")
    with Image.open(mask_path) as im:
        result_mask = np.asarray(im.convert("L")) > 127
    with Image.open(clean_path) as im:
        cleaned = np.asarray(im.convert("RGB"), dtype=np.uint8)

    metrics: dict = {"jaccard": evaluation.jaccard(result_mask, gt_mask)}
    if gt_mask.any():
        metrics["psnr_fill_db"] = _finite(evaluation.psnr_region(
            cleaned, background, gt_mask))
    else:
        metrics["psnr_fill_db"] = None
    written_path = _find_result_file(args.result, "_written.png") \
        if any(f.endswith("_written.png") for f in os.listdir(args.result)) \
        else None
    if written_path:
        with Image.open(written_path) as im:
            written = np.asarray(im.convert("L")) > 127
        untouched = ~written
        if untouched.any():
            metrics["psnr_untouched_db"] = _finite(evaluation.psnr_region(
                cleaned, background, untouched))
    if params.texture == "glyphs" and gt_mask.any():
        metrics["glyph_accuracy"] = evaluation.glyph_accuracy(
            cleaned, background, gt_mask)
    summary_path = os.path.join(args.result, "run_summary.json")
    if os.path.isfile(summary_path):
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        metrics["scans"] = summary.get("scans")
        metrics["seconds"] = summary.get("seconds")
    text = json.dumps(metrics, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    level_name = os.environ.get("CLEANPLATE_LOG",
                                "DEBUG" if args.verbose else "INFO")
    logging.basicConfig(
        level=getattr(logging, level_name.upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "synth":
            return _cmd_synth(args)
        return _cmd_eval(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return 2
    except (ImageSetError, EpipolarError, evaluation.EvaluationError,
            EvaluationFileError, OSError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
