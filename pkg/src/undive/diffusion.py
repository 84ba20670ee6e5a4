"""Stage-1 generative prior: a noise-predicting UNet trained with the
simplified DDPM objective, and the frozen encoder handed to stage 2."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint, load_numpy_state, state_to_numpy

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float
    beta_end: float

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside 1..{self.T}")


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; index ``t`` (1-based) lives at position ``t - 1``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    return NoiseSchedule(beta, alpha, np.cumprod(alpha), float(beta_start), float(beta_end))


def forward_diffuse_step(x_prev, t: int, s: NoiseSchedule, noise):
    """One Markov step x_{t-1} -> x_t. Works on numpy arrays and tensors."""
    s.check_t(t)
    if np.shape(noise) != np.shape(x_prev):
        raise ValueError("noise shape must match x")
    b = float(s.beta[t - 1])
    return math.sqrt(1.0 - b) * x_prev + math.sqrt(b) * noise


def forward_diffuse_closed(x0, t: int, s: NoiseSchedule, noise):
    """Sample x_t directly from x_0."""
    s.check_t(t)
    if np.shape(noise) != np.shape(x0):
        raise ValueError("noise shape must match x")
    ab = float(s.alpha_bar[t - 1])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


# ---------------------------------------------------------------- network


@dataclass
class UNetConfig:
    base_channels: int = 16
    depth: int = 3
    time_embed_dim: int = 64
    num_res_blocks: int = 1
    max_mult: int = 8
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        if self.in_channels != 3 or self.out_channels != 3:
            raise ValueError("the prior UNet maps RGB to RGB")
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be positive")

    def stage_channels(self) -> list[int]:
        """Channel width of encoder stages 0..depth (last entry is the bottleneck)."""
        return [self.base_channels * min(2**k, self.max_mult) for k in range(self.depth + 1)]

    @classmethod
    def full_scale(cls) -> "UNetConfig":
        return cls(base_channels=32, depth=4, time_embed_dim=128, num_res_blocks=2, max_mult=8)


def _groups(c: int) -> int:
    return math.gcd(c, 8)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    dtype = t.dtype if t.is_floating_point() else torch.float32
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / max(half, 1))
    args = t.to(dtype)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(temb, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Encoder(nn.Module):
    """Contracting half of the UNet, including the timestep embedding."""

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.stage_channels()
        d = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.inc = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)
        self.stages = nn.ModuleList(
            nn.ModuleList(ResBlock(ch[k], ch[k], d) for _ in range(cfg.num_res_blocks)) for k in range(cfg.depth)
        )
        self.downs = nn.ModuleList(nn.Conv2d(ch[k], ch[k + 1], 3, stride=2, padding=1) for k in range(cfg.depth))
        self.mid = nn.ModuleList([ResBlock(ch[-1], ch[-1], d), ResBlock(ch[-1], ch[-1], d)])

    def embed(self, t: torch.Tensor) -> torch.Tensor:
        return self.time_mlp(timestep_embedding(t, self.cfg.time_embed_dim))

    def forward(self, x, t) -> tuple[list[torch.Tensor], torch.Tensor]:
        emb = self.embed(t)
        h = self.inc(x)
        feats = []
        for blocks, down in zip(self.stages, self.downs):
            for block in blocks:
                h = block(h, emb)
            feats.append(h)
            h = down(h)
        for block in self.mid:
            h = block(h, emb)
        feats.append(h)
        return feats, emb


class Decoder(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        ch = cfg.stage_channels()
        d = cfg.time_embed_dim
        self.ups = nn.ModuleList(nn.Conv2d(ch[k + 1], ch[k], 3, padding=1) for k in range(cfg.depth))
        self.stages = nn.ModuleList(
            nn.ModuleList(
                ResBlock(2 * ch[k] if i == 0 else ch[k], ch[k], d) for i in range(cfg.num_res_blocks)
            )
            for k in range(cfg.depth)
        )
        self.out_norm = nn.GroupNorm(_groups(ch[0]), ch[0])
        self.out = nn.Conv2d(ch[0], cfg.out_channels, 3, padding=1)

    def forward(self, feats, emb):
        h = feats[-1]
        for k in reversed(range(len(self.ups))):
            h = self.ups[k](F.interpolate(h, scale_factor=2, mode="nearest"))
            h = torch.cat([h, feats[k]], dim=1)
            for block in self.stages[k]:
                h = block(h, emb)
        return self.out(F.silu(self.out_norm(h)))


class UNet(nn.Module):
    """Noise predictor eps_theta(x_t, t)."""

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, x, t):
        if not torch.is_tensor(t):
            t = torch.as_tensor(t)
        t = t.reshape(-1).expand(x.shape[0])
        feats, emb = self.encoder(x, t)
        return self.decoder(feats, emb)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------- objective


def ddpm_loss(x0_batch: torch.Tensor, model, s: NoiseSchedule, rng: torch.Generator) -> torch.Tensor:
    """Simplified DDPM loss with one uniform timestep per sample, mean-reduced.

    ``x0_batch`` must already be in the model's input range ([-1, 1] for the
    prior trainer).
    """
    n = x0_batch.shape[0]
    t = torch.randint(1, s.T + 1, (n,), generator=rng)
    eps = torch.randn(x0_batch.shape, generator=rng, dtype=x0_batch.dtype)
    ab = torch.as_tensor(s.alpha_bar, dtype=x0_batch.dtype)[t - 1].reshape(n, *([1] * (x0_batch.dim() - 1)))
    x_t = ab.sqrt() * x0_batch + (1.0 - ab).sqrt() * eps
    pred = model(x_t, t)
    if pred.shape != eps.shape:
        raise ValueError(f"model output {tuple(pred.shape)} does not match input {tuple(eps.shape)}")
    return ((eps - pred) ** 2).mean()


# ---------------------------------------------------------------- training


@dataclass
class PriorSettings:
    epochs: int = 100
    lr: float = 1e-4
    batch_size: int = 24
    crop: int = 256
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0


def _to_model_range(crops: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(crops.transpose(0, 3, 1, 2))).float() * 2.0 - 1.0


def build_unet(cfg: UNetConfig, seed: int) -> UNet:
    torch.manual_seed(seed)
    return UNet(cfg)


def train_prior(crops, cfg: UNetConfig | None = None, settings: PriorSettings | None = None) -> ModelCheckpoint:
    """Fit the noise predictor on square crops in [0, 1] of shape (N, S, S, 3)."""
    cfg = cfg or UNetConfig()
    settings = settings or PriorSettings()
    crops = np.asarray(crops, dtype=np.float32)
    if crops.ndim != 4 or len(crops) == 0:
        raise ValueError("need a non-empty (N, S, S, 3) crop array")
    side = crops.shape[1]
    if crops.shape[2] != side or side % (2**cfg.depth):
        raise ValueError(f"crop side {side} must be square and divisible by 2**{cfg.depth}")

    schedule = make_schedule(settings.T, settings.beta_start, settings.beta_end)
    model = build_unet(cfg, settings.seed)
    rng = torch.Generator().manual_seed(settings.seed + 1)
    data = _to_model_range(crops)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr)
    history = []
    for epoch in range(settings.epochs):
        order = torch.randperm(len(data), generator=rng)
        total, count = 0.0, 0
        for i in range(0, len(data), settings.batch_size):
            batch = data[order[i : i + settings.batch_size]]
            loss = ddpm_loss(batch, model, schedule, rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        history.append(total / count)
        log.info("prior epoch %d loss %.5f", epoch + 1, history[-1])

    meta = {
        "unet": asdict(cfg),
        "schedule": {"T": settings.T, "beta_start": settings.beta_start, "beta_end": settings.beta_end},
        "settings": asdict(settings),
        "log": [{"epoch": i + 1, "l_sim": v} for i, v in enumerate(history)],
    }
    return ModelCheckpoint("prior", state_to_numpy(model, "unet."), meta)


def unet_from_checkpoint(ckpt: ModelCheckpoint) -> UNet:
    model = UNet(UNetConfig(**ckpt.meta["unet"]))
    load_numpy_state(model, ckpt.subset("unet"))
    return model


# ---------------------------------------------------------------- frozen encoder


class EncoderHandle(nn.Module):
    """The prior's encoder evaluated at t=0, with every parameter frozen.

    Inputs are frames in [0, 1] (NCHW); they are mapped to the prior's
    [-1, 1] range internally. Returns one feature map per encoder stage,
    stage ``k`` at 1/2**k of the input resolution.
    """

    frozen = True

    def __init__(self, encoder: Encoder):
        super().__init__()
        self.encoder = encoder
        for p in self.encoder.parameters():
            p.requires_grad_(False)
        self.encoder.eval()

    @property
    def cfg(self) -> UNetConfig:
        return self.encoder.cfg

    @property
    def stage_channels(self) -> list[int]:
        return self.cfg.stage_channels()

    def train(self, mode: bool = True):
        # stays in eval mode regardless of the parent module
        super().train(False)
        return self

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        f = 2 ** self.cfg.depth
        if x.shape[-1] % f or x.shape[-2] % f:
            raise ValueError(f"encoder input {tuple(x.shape[-2:])} must be divisible by {f}")
        t = torch.zeros(x.shape[0], dtype=x.dtype)
        feats, _ = self.encoder(x * 2.0 - 1.0, t)
        return feats


def extract_encoder(ckpt: ModelCheckpoint) -> EncoderHandle:
    if "unet" not in ckpt.meta:
        raise ValueError("checkpoint carries no UNet configuration")
    cfg = UNetConfig(**ckpt.meta["unet"])
    enc_params = ckpt.subset("unet.encoder")
    if not enc_params:
        raise ValueError("checkpoint is missing encoder parameters")
    encoder = Encoder(cfg)
    load_numpy_state(encoder, enc_params)
    return EncoderHandle(encoder)
