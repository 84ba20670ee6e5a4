"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import ModelCheckpoint
from .config import RunConfig, load_config
from .data import (
    FixedWater,
    WaterRanges,
    load_pairs,
    load_video_pairs,
    make_synthetic_dataset,
    save_pairs,
    save_video,
    select_training_crops,
)
from .diffusion import extract_encoder, train_prior
from .imgcore import frame_name, save_frame
from .metrics import IMAGE_METRICS, evaluate_video
from .training import train_spatial, train_temporal
from .video import enhance_video

log = logging.getLogger("undive")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValueError(message)


def _config(args) -> RunConfig:
    base = RunConfig.desk() if args.desk else RunConfig()
    return load_config(args.config, args.set, base)


def _video_dirs(root: Path) -> list[Path]:
    """``root`` itself when it holds a frames/ folder, else its sub-videos."""
    if (root / "frames").is_dir():
        return [root]
    subs = sorted(p for p in root.iterdir() if (p / "frames").is_dir())
    if not subs:
        raise ValueError(f"no video directories under {root}")
    return subs


def cmd_train_prior(args):
    cfg = _config(args)
    st = cfg.schedule.prior
    crops, _ = select_training_crops(args.corpus, st.crop, args.fraction, args.per_frame, cfg.seed)
    if args.max_crops:
        crops = crops[: args.max_crops]
    ckpt = train_prior(np.stack(crops), cfg.unet, replace(st, seed=cfg.seed))
    ckpt.save(args.out)
    log.info("prior: %d crops, final loss %.5f -> %s", len(crops), ckpt.meta["log"][-1]["l_sim"], args.out)


def cmd_train_spatial(args):
    cfg = _config(args)
    prior = ModelCheckpoint.load(args.prior)
    if prior.stage != "prior":
        raise ValueError(f"{args.prior} is a {prior.stage!r} checkpoint, expected 'prior'")
    pairs = load_pairs(args.data)
    ckpt = train_spatial(pairs, cfg.schedule.spatial, extract_encoder(prior), cfg.loss, cfg.enhancer, cfg.seed,
                         prior_digest=prior.digest())
    ckpt.save(args.out)
    log.info("spatial: %d pairs, final total %.5f -> %s", len(pairs), ckpt.meta["log"][-1]["total"], args.out)


def cmd_train_temporal(args):
    cfg = _config(args)
    ckpt = ModelCheckpoint.load(args.spatial)
    pairs = [p for d in _video_dirs(Path(args.data)) for p in load_video_pairs(d, args.stride)]
    out = train_temporal(pairs, cfg.schedule.temporal, ckpt, cfg.loss, cfg.seed)
    out.save(args.out)
    log.info("temporal: %d frame pairs, final total %.5f -> %s", len(pairs), out.meta["log"][-1]["total"], args.out)


def cmd_enhance(args):
    ckpt = ModelCheckpoint.load(args.ckpt)
    mode = "none" if args.no_backscatter else args.backscatter
    manifest = enhance_video(args.frames, args.out, ckpt, args.depth, backscatter=mode)
    log.info("enhanced %d frames in %.2fs", manifest["frame_count"], manifest["seconds_total"])


def cmd_evaluate(args):
    metrics = args.metrics.split(",") if args.metrics else None
    unknown = set(metrics or []) - set(IMAGE_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    report = evaluate_video(args.frames, metrics, temporal=not args.no_temporal)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv:
        report.write_csv(args.csv)


def cmd_degrade(args):
    cfg = _config(args)
    ranges = FixedWater(cfg.water) if cfg.water is not None else WaterRanges()
    data = make_synthetic_dataset(args.clean, ranges, args.depth_mode, args.n, args.size, cfg.seed,
                                  kind=args.kind, n_frames=args.frames, offset=(args.dx, args.dy))
    out = Path(args.out)
    if args.kind == "pairs":
        save_pairs(data, out)
    else:
        for i, vid in enumerate(data, start=1):
            save_video(vid, out / f"video_{i:04d}")
    log.info("wrote %d %s to %s", len(data), args.kind, out)


def cmd_select_crops(args):
    crops, scores = select_training_crops(args.corpus, args.crop, args.fraction, args.per_frame, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, c in enumerate(crops, start=1):
        save_frame(c, out / frame_name(i))
    np.savetxt(out / "scores.txt", scores, fmt="%.6f")
    log.info("kept %d crops (score %.4f..%.4f)", len(crops), scores.min(), scores.max())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="undive", description="Two-stage underwater video enhancement.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="key/value config file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
        sp.add_argument("--desk", action="store_true", help="start from the small CPU-friendly defaults")
        return sp

    sp = with_config(sub.add_parser("train-prior", help="train the diffusion prior on curated crops"))
    sp.add_argument("--corpus", required=True, help="directory of clean frames")
    sp.add_argument("--fraction", type=float, default=0.5, help="fraction of crops kept by uniformity")
    sp.add_argument("--per-frame", type=int, default=8)
    sp.add_argument("--max-crops", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_prior)

    sp = with_config(sub.add_parser("train-spatial", help="train the enhancer on paired images"))
    sp.add_argument("--prior", required=True, help="prior checkpoint")
    sp.add_argument("--data", required=True, help="directory with degraded/, gt/ and depth/")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_spatial)

    sp = with_config(sub.add_parser("train-temporal", help="fine-tune with the temporal consistency loss"))
    sp.add_argument("--spatial", required=True, help="stage 'spatial' checkpoint")
    sp.add_argument("--data", required=True, help="video directory (frames/, depth/, gt/) or a folder of them")
    sp.add_argument("--stride", type=int, default=2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_temporal)

    sp = sub.add_parser("enhance", help="enhance a directory of frames")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--frames", required=True)
    sp.add_argument("--depth", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--backscatter", choices=("frame", "video"), default="frame",
                    help="fit backscatter per frame, or once per video (experimental)")
    sp.add_argument("--no-backscatter", action="store_true", help="skip backscatter removal")
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("evaluate", help="no-reference quality report for a frame directory")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--metrics", help=f"comma list from {','.join(IMAGE_METRICS)}")
    sp.add_argument("--no-temporal", action="store_true")
    sp.add_argument("--out", help="report path (default stdout)")
    sp.add_argument("--csv", help="also write a flat CSV")
    sp.set_defaults(func=cmd_evaluate)

    sp = with_config(sub.add_parser("degrade", help="write a synthetic degraded dataset"))
    sp.add_argument("--clean", help="clean frame directory (procedural scenes when omitted)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", choices=("pairs", "videos"), default="pairs")
    sp.add_argument("-n", type=int, default=200)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--depth-mode", choices=("smooth", "ramp"), default="smooth")
    sp.add_argument("--frames", type=int, default=8, help="frames per video")
    sp.add_argument("--dx", type=int, default=3)
    sp.add_argument("--dy", type=int, default=0)
    sp.set_defaults(func=cmd_degrade)

    sp = sub.add_parser("select-crops", help="write the most histogram-uniform random crops")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--crop", type=int, default=256)
    sp.add_argument("--fraction", type=float, default=0.5)
    sp.add_argument("--per-frame", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_select_crops)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValueError as exc:
        print(f"undive: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"undive: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"undive: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
