"""Training objectives. All tensors are NCHW; every pixel sum is mean-reduced."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import torch

from .flow import warp_tensor


@dataclass
class LossWeights:
    lambda1: float = 1.0  # reconstruction
    lambda2: float = 0.2  # illumination smoothness
    lambda3: float = 0.1  # colour angle
    lambda_t: float = 1.0  # temporal consistency, phase 2 only

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda_t) < 0:
            raise ValueError("loss weights must be non-negative")


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    # exact zero at zero, finite (zero) gradient there
    pos = x > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), torch.zeros_like(x))


# ---------------------------------------------------------------- SSIM

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@lru_cache(maxsize=None)
def _gauss1d(win: int, sigma: float) -> np.ndarray:
    r = win // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


@lru_cache(maxsize=None)
def _symmetric_index(n: int, pad: int) -> np.ndarray:
    return np.pad(np.arange(n), pad, mode="symmetric")


def _blur(x: torch.Tensor) -> torch.Tensor:
    """Separable Gaussian with half-sample symmetric boundary; output keeps size."""
    n, c, h, w = x.shape
    r = SSIM_WIN // 2
    g = torch.as_tensor(_gauss1d(SSIM_WIN, SSIM_SIGMA), dtype=x.dtype)
    xp = x.index_select(3, torch.as_tensor(_symmetric_index(w, r)))
    xp = torch.nn.functional.conv2d(xp.reshape(n * c, 1, h, -1), g.view(1, 1, 1, -1))
    xp = xp.index_select(2, torch.as_tensor(_symmetric_index(h, r)))
    xp = torch.nn.functional.conv2d(xp, g.view(1, 1, -1, 1))
    return xp.reshape(n, c, h, w)


def ssim_map(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_pair(a, b)
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a, mu_b = _blur(a), _blur(b)
    saa = _blur(a * a) - mu_a**2
    sbb = _blur(b * b) - mu_b**2
    sab = _blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM over pixels and channels (11x11 Gaussian, sigma 1.5, range 1)."""
    return ssim_map(a, b).mean()


# ---------------------------------------------------------------- spatial terms


def recon_loss(ihat: torch.Tensor, igt: torch.Tensor) -> torch.Tensor:
    _check_pair(ihat, igt)
    return 0.85 * (1.0 - ssim(ihat, igt)) + 0.15 * (ihat - igt).abs().mean()


def _grads(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    # forward differences on the (H-1) x (W-1) grid where both exist
    gx = x[:, :, :-1, 1:] - x[:, :, :-1, :-1]
    gy = x[:, :, 1:, :-1] - x[:, :, :-1, :-1]
    return gx, gy


def smooth_loss(s_hr: torch.Tensor, i_hr: torch.Tensor, edge_weight: float = 10.0) -> torch.Tensor:
    """Edge-aware smoothness: mean_j w_j ||grad S_j||_2, w_j = exp(-k ||grad I_j||_1)."""
    if s_hr.shape[0] != i_hr.shape[0] or s_hr.shape[2:] != i_hr.shape[2:]:
        raise ValueError(f"shape mismatch: {tuple(s_hr.shape)} vs {tuple(i_hr.shape)}")
    sx, sy = _grads(s_hr)
    norm = _safe_sqrt(sx**2 + sy**2).mean(dim=1, keepdim=True)
    ix, iy = _grads(i_hr.detach())
    w = torch.exp(-edge_weight * (ix.abs() + iy.abs()).mean(dim=1, keepdim=True))
    return (w * norm).mean()


def color_loss(ihat: torch.Tensor, igt: torch.Tensor, min_norm: float = 1e-6) -> torch.Tensor:
    """Mean per-pixel angle between RGB vectors; black pixels contribute 0.

    The angle is evaluated as 2 atan2(|u - v|, |u + v|) on unit vectors,
    which equals the clamped arccos of the normalised dot product but stays
    accurate near 0 and pi.
    """
    _check_pair(ihat, igt)
    na = _safe_sqrt((ihat**2).sum(dim=1, keepdim=True))
    nb = _safe_sqrt((igt**2).sum(dim=1, keepdim=True))
    # unit vectors first, so parallel inputs give u - v of exactly 0
    u = ihat / na.clamp_min(min_norm)
    v = igt / nb.clamp_min(min_norm)
    diff = _safe_sqrt(((u - v) ** 2).sum(dim=1))
    summ = _safe_sqrt(((u + v) ** 2).sum(dim=1))
    angle = 2.0 * torch.atan2(diff, summ)
    keep = (na[:, 0] >= min_norm) & (nb[:, 0] >= min_norm)
    return torch.where(keep, angle, torch.zeros_like(angle)).mean()


def spatial_loss(ihat, igt, s_hr, i_hr, w: LossWeights | None = None) -> dict[str, torch.Tensor]:
    """Weighted spatial objective; returns components and ``total``."""
    w = w or LossWeights()
    l_r = recon_loss(ihat, igt)
    l_sm = smooth_loss(s_hr, i_hr)
    l_c = color_loss(ihat, igt)
    total = w.lambda1 * l_r + w.lambda2 * l_sm + w.lambda3 * l_c
    return {"l_r": l_r, "l_sm": l_sm, "l_c": l_c, "total": total}


# ---------------------------------------------------------------- temporal terms

Enhancer = Callable[[torch.Tensor], torch.Tensor]


def flow_consistency_loss(f: Enhancer, x_t, x_tp1, u_back) -> torch.Tensor:
    """|| W(f(x_t), U_{t+1,t}) - f(W(x_t, U_{t+1,t})) ||^2 over warp-valid pixels.

    ``u_back`` is the (N, 2, H, W) field U_{t+1,t}; ``x_tp1`` only fixes the
    expected shape.
    """
    _check_pair(x_t, x_tp1)
    if u_back.shape[0] != x_t.shape[0] or u_back.shape[2:] != x_t.shape[2:]:
        raise ValueError("flow does not match frames")
    warped_out, valid = warp_tensor(f(x_t), u_back)
    warped_in, _ = warp_tensor(x_t, u_back)
    diff = (warped_out - f(warped_in)) ** 2
    mask = valid.to(diff.dtype).expand_as(diff)
    return (diff * mask).sum() / mask.sum().clamp_min(1.0)


def temporal_loss(f: Enhancer, x_t, x_tp1, u_fwd, u_back) -> torch.Tensor:
    """Bidirectional consistency: 0.5 L_of(x_t, x_t+1) + 0.5 L_of(x_t+1, x_t)."""
    return 0.5 * flow_consistency_loss(f, x_t, x_tp1, u_back) + 0.5 * flow_consistency_loss(
        f, x_tp1, x_t, u_fwd
    )
