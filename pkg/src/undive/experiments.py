"""Desk-scale end-to-end runs on synthetic data.

Used by the acceptance suite and ``scripts/toy_pipeline.py``; each function
returns plain numbers so callers decide what counts as success.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import ModelCheckpoint
from .config import RunConfig
from .data import make_synthetic_pairs, make_synthetic_video, select_training_crops, synthetic_scene
from .diffusion import extract_encoder, train_prior
from .enhancer import enhance_frame, enhancer_from_checkpoint
from .losses import LossWeights
from .metrics import psnr, temporal_warp_error
from .training import train_spatial, train_temporal


def toy_prior_crops(n: int = 200, size: int = 32, seed: int = 0) -> np.ndarray:
    """``n`` histogram-ranked crops from procedural scenes."""
    rng = np.random.default_rng(seed)
    scenes = [synthetic_scene(rng, 3 * size, 3 * size) for _ in range(n // 8 + 1)]
    crops, _ = select_training_crops(scenes, size, 1.0, per_frame=8, seed=seed)
    return np.stack(crops[:n])


def toy_prior(cfg: RunConfig | None = None, n: int = 200) -> ModelCheckpoint:
    cfg = cfg or RunConfig.desk()
    st = cfg.schedule.prior
    return train_prior(toy_prior_crops(n, st.crop, cfg.seed), cfg.unet, replace(st, seed=cfg.seed))


@dataclass
class SpatialResult:
    ckpt: ModelCheckpoint
    psnr_degraded: float
    psnr_enhanced: float
    seconds: float

    @property
    def gain(self) -> float:
        return self.psnr_enhanced - self.psnr_degraded


def spatial_toy(prior: ModelCheckpoint, cfg: RunConfig | None = None, n_train: int = 200, n_test: int = 100,
                size: int = 64, data_seed: int = 1, test_seed: int = 99) -> SpatialResult:
    """Train the enhancer on synthetic pairs; mean PSNR on held-out pairs."""
    cfg = cfg or RunConfig.desk()
    t0 = time.perf_counter()
    pairs = make_synthetic_pairs(n_train, size, seed=data_seed)
    ckpt = train_spatial(pairs, cfg.schedule.spatial, extract_encoder(prior), cfg.loss, cfg.enhancer, cfg.seed,
                         prior_digest=prior.digest())
    seconds = time.perf_counter() - t0
    model = enhancer_from_checkpoint(ckpt)
    held = make_synthetic_pairs(n_test, size, seed=test_seed)
    before = [psnr(p.degraded, p.gt) for p in held]
    after = [psnr(enhance_frame(p.degraded, p.depth, model), p.gt) for p in held]
    return SpatialResult(ckpt, float(np.mean(before)), float(np.mean(after)), seconds)


@dataclass
class TemporalResult:
    seed: int
    error_spatial: float
    error_temporal: float
    seconds: float

    @property
    def improved(self) -> bool:
        return self.error_temporal < self.error_spatial


def video_warp_error(video, ckpt: ModelCheckpoint) -> float:
    """temporal_warp_error of the enhanced frames under the exact flow."""
    model = enhancer_from_checkpoint(ckpt)
    out = [enhance_frame(f, z, model) for f, z in zip(video.frames, video.depth)]
    return temporal_warp_error(out, video.flows_back)


def _offset(rng: np.random.Generator) -> tuple[int, int]:
    while True:
        dx, dy = (int(v) for v in rng.integers(-3, 4, size=2))
        if dx or dy:
            return dx, dy


def temporal_toy(spatial: ModelCheckpoint, seed: int, cfg: RunConfig | None = None, n_videos: int = 8,
                 n_frames: int = 6, size: int = 64, weights: LossWeights | None = None) -> TemporalResult:
    """Fine-tune ``spatial`` on synthetic videos and compare warp error on a
    held-out video against the spatial model."""
    cfg = cfg or RunConfig.desk()
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    pairs = []
    for k in range(n_videos):
        vid = make_synthetic_video(n_frames, size, _offset(rng), seed=1000 * seed + k)
        pairs.extend(vid.pairs(stride=2))
    weights = weights or cfg.loss
    ckpt = train_temporal(pairs, cfg.schedule.temporal, spatial, weights, seed)
    seconds = time.perf_counter() - t0
    held = make_synthetic_video(n_frames, size, _offset(rng), seed=1000 * seed + 999)
    return TemporalResult(seed, video_warp_error(held, spatial), video_warp_error(held, ckpt), seconds)
