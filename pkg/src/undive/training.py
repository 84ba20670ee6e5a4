"""Stage-2 training: spatial phase (paired images) and temporal phase
(frame pairs with flow), both driven by the same seeded loop."""

from __future__ import annotations

import logging
from dataclasses import asdict

import numpy as np
import torch

from .checkpoint import ModelCheckpoint
from .config import PhaseSettings
from .diffusion import EncoderHandle
from .enhancer import Enhancer, EnhancerConfig, build_enhancer, enhancer_checkpoint, enhancer_from_checkpoint
from .flow import horn_schunck
from .imgcore import to_tensor
from .losses import LossWeights, spatial_loss, temporal_loss

log = logging.getLogger(__name__)


def _stack(frames) -> torch.Tensor:
    return to_tensor(np.stack(frames))


def _flow_tensor(fields) -> torch.Tensor:
    return torch.from_numpy(np.stack(fields).transpose(0, 3, 1, 2).copy()).float()


def _run(model: Enhancer, n_items: int, settings: PhaseSettings, seed: int, step_fn) -> list[dict]:
    """Shared optimisation loop: Adam + cosine decay, seeded shuffling.

    ``step_fn(indices)`` returns a dict of scalar tensors including ``total``.
    """
    if n_items == 0:
        raise ValueError("empty training set")
    params = model.trainable_parameters()
    opt = torch.optim.Adam(params, lr=settings.lr)
    steps_per_epoch = -(-n_items // settings.batch_size)
    total_steps = max(1, steps_per_epoch * settings.epochs)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total_steps)
    rng = torch.Generator().manual_seed(seed)
    records = []
    step = 0
    model.train()
    for epoch in range(settings.epochs):
        order = torch.randperm(n_items, generator=rng).tolist()
        for i in range(0, n_items, settings.batch_size):
            parts = step_fn(order[i : i + settings.batch_size])
            opt.zero_grad()
            parts["total"].backward()
            opt.step()
            sched.step()
            step += 1
            rec = {"step": step, "epoch": epoch + 1, **{k: float(v.detach()) for k, v in parts.items()}}
            records.append(rec)
        log.info("epoch %d total %.5f", epoch + 1, np.mean([r["total"] for r in records if r["epoch"] == epoch + 1]))
    model.eval()
    return records


def epoch_means(records: list[dict], key: str = "total") -> list[float]:
    epochs = sorted({r["epoch"] for r in records})
    return [float(np.mean([r[key] for r in records if r["epoch"] == e])) for e in epochs]


def train_spatial(
    pairs,
    settings: PhaseSettings,
    encoder: EncoderHandle | None = None,
    weights: LossWeights | None = None,
    cfg: EnhancerConfig | None = None,
    seed: int = 0,
    init: ModelCheckpoint | None = None,
    prior_digest: str | None = None,
) -> ModelCheckpoint:
    """Minimise the weighted spatial loss on paired samples.

    Starts from ``init`` when given (continued training), otherwise from a
    fresh enhancer around ``encoder``.
    """
    weights = weights or LossWeights()
    if init is not None:
        model = enhancer_from_checkpoint(init)
        prior_digest = prior_digest or init.meta.get("prior_digest")
    else:
        if encoder is None:
            raise ValueError("train_spatial needs an encoder or an init checkpoint")
        model = build_enhancer(cfg or EnhancerConfig(), encoder, seed)
    pairs = list(pairs)
    d = _stack([p.clean_input for p in pairs])
    gt = _stack([p.gt for p in pairs])

    def step(idx):
        ihat, s = model(d[idx])
        return spatial_loss(ihat, gt[idx], s, d[idx], weights)

    records = _run(model, len(pairs), settings, seed, step)
    meta = {"prior_digest": prior_digest, "weights": asdict(weights), "settings": asdict(settings), "seed": seed,
            "log": records}
    return enhancer_checkpoint(model, "spatial", meta)


def pair_flows(pair) -> tuple[np.ndarray, np.ndarray]:
    """(U_{t,t+1}, U_{t+1,t}) for a frame pair, estimated on the raw frames
    when no precomputed fields are attached."""
    u_fwd = pair.u_fwd if pair.u_fwd is not None else horn_schunck(pair.x_t, pair.x_tp1)
    u_back = pair.u_back if pair.u_back is not None else horn_schunck(pair.x_tp1, pair.x_t)
    return u_fwd, u_back


def train_temporal(
    frame_pairs,
    settings: PhaseSettings,
    ckpt: ModelCheckpoint,
    weights: LossWeights | None = None,
    seed: int = 0,
) -> ModelCheckpoint:
    """Fine-tune a spatial checkpoint on L_s + lambda_t * L_t.

    The spatial term uses the first frame of each pair and its ground truth;
    the temporal term uses both frames and both flow directions.
    """
    if ckpt.stage != "spatial":
        raise ValueError(f"temporal training needs a 'spatial' checkpoint, got {ckpt.stage!r}")
    weights = weights or LossWeights()
    model = enhancer_from_checkpoint(ckpt)
    frame_pairs = list(frame_pairs)
    if any(p.gt_t is None for p in frame_pairs):
        raise ValueError("frame pairs need ground truth for the spatial term")
    d_t = _stack([p.clean_t for p in frame_pairs])
    d_tp1 = _stack([p.clean_tp1 for p in frame_pairs])
    gt = _stack([p.gt_t for p in frame_pairs])
    flows = [pair_flows(p) for p in frame_pairs]
    u_fwd = _flow_tensor([f for f, _ in flows])
    u_back = _flow_tensor([b for _, b in flows])

    def step(idx):
        ihat, s = model(d_t[idx])
        parts = spatial_loss(ihat, gt[idx], s, d_t[idx], weights)
        l_t = temporal_loss(model.enhance, d_t[idx], d_tp1[idx], u_fwd[idx], u_back[idx])
        parts["l_t"] = l_t
        if weights.lambda_t > 0:
            parts["total"] = parts["total"] + weights.lambda_t * l_t
        return parts

    records = _run(model, len(frame_pairs), settings, seed, step)
    meta = {"prior_digest": ckpt.meta.get("prior_digest"), "spatial_digest": ckpt.digest(),
            "weights": asdict(weights), "settings": asdict(settings), "seed": seed, "log": records}
    return enhancer_checkpoint(model, "temporal", meta)
