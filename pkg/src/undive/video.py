"""Frame-directory video enhancement driver."""

from __future__ import annotations

import json
import time
from pathlib import Path

from .checkpoint import ModelCheckpoint
from .data import _depth_for
from .enhancer import enhance_clean, enhancer_from_checkpoint
from .imgcore import list_frames, load_depth, load_frame, save_frame
from .physics import backscatter_free, backscatter_from_fit, fit_backscatter_shared, remove_backscatter

MANIFEST = "manifest.json"


def enhance_video(in_dir, out_dir, ckpt: ModelCheckpoint, depth_dir, backscatter="frame", model=None) -> dict:
    """Enhance every frame in ``in_dir`` and write same-named outputs.

    Depth maps are matched by frame stem in ``depth_dir``. ``backscatter`` is
    "frame" (fit per frame, the default), "video" (one fit shared by all
    frames; experimental) or False/"none" (skip removal). ``model`` overrides
    the network built from ``ckpt``; the checkpoint still supplies the digest
    recorded in the manifest. Returns the manifest.
    """
    mode = {True: "frame", False: "none"}.get(backscatter, backscatter)
    if mode not in ("frame", "video", "none"):
        raise ValueError(f"unknown backscatter mode {backscatter!r}")
    in_dir, out_dir, depth_dir = Path(in_dir), Path(out_dir), Path(depth_dir)
    paths = list_frames(in_dir)
    if not paths:
        raise ValueError(f"no frames in {in_dir}")
    depth_paths = [_depth_for(depth_dir, p.stem) for p in paths]
    model = model if model is not None else enhancer_from_checkpoint(ckpt)
    model.eval()
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    per_frame = []
    shared = None
    if mode == "video":
        shared = fit_backscatter_shared([load_frame(p) for p in paths], [load_depth(dp) for dp in depth_paths])
    for p, dp in zip(paths, depth_paths):
        t0 = time.perf_counter()
        frame, depth = load_frame(p), load_depth(dp)
        if mode == "frame":
            d = backscatter_free(frame, depth)
        elif mode == "video":
            d = remove_backscatter(frame, backscatter_from_fit(frame, depth, shared))
        else:
            d = frame
        out = enhance_clean(d, model)
        save_frame(out, out_dir / (p.stem + ".png"))
        per_frame.append(time.perf_counter() - t0)
    total = time.perf_counter() - start
    manifest = {
        "frame_count": len(paths),
        "frames": [p.stem + ".png" for p in paths],
        "checkpoint_sha256": ckpt.digest(),
        "checkpoint_stage": ckpt.stage,
        "backscatter_removal": mode,
        "seconds_total": total,
        "seconds_per_frame": total / len(paths),
        "seconds_max_frame": max(per_frame),
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return manifest
