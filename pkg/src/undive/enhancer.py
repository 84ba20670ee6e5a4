"""Spatial enhancer: full-resolution guide stream + frozen prior encoder on the
half-resolution input, fused and upsampled into a positive illumination map
that divides the backscatter-free image."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint, load_numpy_state, state_to_numpy
from .diffusion import Encoder, EncoderHandle, UNetConfig
from .imgcore import ShapeError, as_frame, from_tensor, to_tensor
from .physics import backscatter_free


@dataclass
class EnhancerConfig:
    guide_channels: int = 8
    fusion_channels: int = 32
    encoder_stage_selection: tuple[int, ...] | None = None  # None = every stage
    epsilon_stability: float = 1e-4
    illumination_floor: float = 0.05
    illumination_channels: int = 3
    guide_bias: bool = True

    def __post_init__(self):
        if self.epsilon_stability <= 0:
            raise ValueError("epsilon_stability must be > 0")
        if not 0 < self.illumination_floor < 1:
            raise ValueError("illumination_floor must lie in (0, 1)")
        if self.illumination_channels not in (1, 3):
            raise ValueError("illumination map has 1 or 3 channels")
        if self.encoder_stage_selection is not None:
            self.encoder_stage_selection = tuple(int(k) for k in self.encoder_stage_selection)

    @classmethod
    def full_scale(cls) -> "EnhancerConfig":
        return cls(guide_channels=16, fusion_channels=64)


class GuideNet(nn.Module):
    """Three stride-1 3x3 convolutions at input resolution."""

    def __init__(self, channels: int, bias: bool = True):
        super().__init__()
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(3, channels, 3, padding=1, bias=bias),
                nn.Conv2d(channels, channels, 3, padding=1, bias=bias),
                nn.Conv2d(channels, channels, 3, padding=1, bias=bias),
            ]
        )

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
        return x


def _bilinear_taps(n_in: int, scale: int):
    """Source indices and fractional weights for align_corners=False upsampling."""
    dst = np.arange(n_in * scale)
    src = (dst + 0.5) / scale - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    return lo, hi, frac


def _tap_matrices(n_in: int, scale: int, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """(n_out, n_in) matrices holding the low-tap and high-tap weights."""
    lo, hi, frac = _bilinear_taps(n_in, scale)
    rows = np.arange(len(lo))
    m_lo = np.zeros((len(lo), n_in))
    m_hi = np.zeros((len(lo), n_in))
    np.add.at(m_lo, (rows, lo), 1.0 - frac)
    np.add.at(m_hi, (rows, hi), frac)
    return torch.as_tensor(m_lo, dtype=dtype), torch.as_tensor(m_hi, dtype=dtype)


class LearnableBilinear(nn.Module):
    """Bilinear upsampling by an integer factor whose four tap weights carry a
    learnable per-channel gain (1 at init, i.e. plain bilinear).

    The taps are separable, so the operator is applied as two small matrix
    products: columns first at low row resolution, then rows.
    """

    def __init__(self, channels: int, scale: int):
        super().__init__()
        self.scale = scale
        # gains for the (y_lo x_lo, y_lo x_hi, y_hi x_lo, y_hi x_hi) taps
        self.mix = nn.Parameter(torch.ones(channels, 4))

    def forward(self, x):
        n, c, h, w = x.shape
        ylo, yhi = _tap_matrices(h, self.scale, x.dtype)
        xlo, xhi = _tap_matrices(w, self.scale, x.dtype)
        cols_lo = x @ xlo.T
        cols_hi = x @ xhi.T
        m = self.mix.to(x.dtype).view(1, c, 4, 1, 1)
        inner_lo = m[:, :, 0] * cols_lo + m[:, :, 1] * cols_hi
        inner_hi = m[:, :, 2] * cols_lo + m[:, :, 3] * cols_hi
        return torch.cat([ylo, yhi], dim=1) @ torch.cat([inner_lo, inner_hi], dim=2)


class Enhancer(nn.Module):
    """f_Theta: backscatter-free image D_hr -> illumination map S_hr."""

    def __init__(self, cfg: EnhancerConfig, encoder: EncoderHandle):
        super().__init__()
        self.cfg = cfg
        self.encoder = encoder
        depth = encoder.cfg.depth
        stages = cfg.encoder_stage_selection
        self.stages = tuple(range(depth + 1)) if stages is None else tuple(sorted(stages))
        if any(k < 0 or k > depth for k in self.stages):
            raise ValueError(f"encoder stages must lie in 0..{depth}")
        chans = encoder.stage_channels
        self.guide = GuideNet(cfg.guide_channels, cfg.guide_bias)
        self.ups = nn.ModuleList(LearnableBilinear(chans[k], 2 ** (k + 1)) for k in self.stages)
        fused = cfg.guide_channels + sum(chans[k] for k in self.stages)
        self.proj1 = nn.Conv2d(fused, cfg.fusion_channels, 1)
        self.proj2 = nn.Conv2d(cfg.fusion_channels, cfg.illumination_channels, 1)

    @property
    def size_multiple(self) -> int:
        return 2 ** (self.encoder.cfg.depth + 1)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def global_features(self, d_lr: torch.Tensor) -> list[torch.Tensor]:
        feats = self.encoder(d_lr)
        return [feats[k] for k in self.stages]

    def fuse_and_upsample(self, guide: torch.Tensor, globals_: list[torch.Tensor]) -> torch.Tensor:
        ups = [up(g) for up, g in zip(self.ups, globals_)]
        h = torch.cat([guide, *ups], dim=1)
        h = self.proj2(F.leaky_relu(self.proj1(h), 0.1))
        s = F.softplus(h).clamp_min(self.cfg.illumination_floor)
        if s.shape[1] == 1:
            s = s.expand(-1, 3, -1, -1)
        return s

    def illumination(self, d_hr: torch.Tensor) -> torch.Tensor:
        h, w = d_hr.shape[-2:]
        if h % self.size_multiple or w % self.size_multiple:
            raise ShapeError(f"input {h}x{w} must be divisible by {self.size_multiple}")
        d_lr = F.avg_pool2d(d_hr, 2)
        return self.fuse_and_upsample(self.guide(d_hr), self.global_features(d_lr))

    def forward(self, d_hr: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        s = self.illumination(d_hr)
        return enhance_divide(d_hr, s, self.cfg.epsilon_stability), s

    def enhance(self, d_hr: torch.Tensor) -> torch.Tensor:
        return self(d_hr)[0]


def enhance_divide(i_hr, s, eps: float):
    """I / (S + eps) clipped to [0, 1]; tensors or arrays."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if tuple(i_hr.shape) != tuple(s.shape):
        raise ShapeError(f"image {tuple(i_hr.shape)} and illumination {tuple(s.shape)} differ")
    out = i_hr / (s + eps)
    if torch.is_tensor(out):
        return out.clamp(0.0, 1.0)
    return np.clip(out, 0.0, 1.0)


def count_all_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------- persistence


def build_enhancer(cfg: EnhancerConfig, encoder: EncoderHandle, seed: int = 0) -> Enhancer:
    torch.manual_seed(seed)
    return Enhancer(cfg, encoder)


def enhancer_checkpoint(model: Enhancer, stage: str, meta: dict) -> ModelCheckpoint:
    cfg = asdict(model.cfg)
    if cfg["encoder_stage_selection"] is not None:
        cfg["encoder_stage_selection"] = list(cfg["encoder_stage_selection"])
    full = {"enhancer": cfg, "unet": asdict(model.encoder.cfg), **meta}
    return ModelCheckpoint(stage, state_to_numpy(model, "model."), full)


def enhancer_from_checkpoint(ckpt: ModelCheckpoint) -> Enhancer:
    if ckpt.stage not in ("spatial", "temporal"):
        raise ValueError(f"expected an enhancer checkpoint, got stage {ckpt.stage!r}")
    encoder = EncoderHandle(Encoder(UNetConfig(**ckpt.meta["unet"])))
    model = Enhancer(EnhancerConfig(**ckpt.meta["enhancer"]), encoder)
    load_numpy_state(model, ckpt.subset("model"))
    return model


# ---------------------------------------------------------------- frame level


@torch.no_grad()
def enhance_clean(d, model: Enhancer) -> np.ndarray:
    """Illumination division of an already backscatter-free frame.

    Frames whose size is not a multiple of the network stride are padded by
    edge replication and cropped back.
    """
    d = as_frame(d)
    h, w, _ = d.shape
    m = model.size_multiple
    ph, pw = (-h) % m, (-w) % m
    x = to_tensor(d)
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    out = model.enhance(x)[..., :h, :w]
    return np.clip(from_tensor(out)[0], 0.0, 1.0)


def enhance_frame(frame, depth, model: Enhancer, backscatter: bool = True) -> np.ndarray:
    """Backscatter removal followed by illumination division for one frame."""
    frame = as_frame(frame)
    return enhance_clean(backscatter_free(frame, depth) if backscatter else frame, model)
