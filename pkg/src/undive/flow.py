"""Optical flow: bilinear warping, a Horn-Schunck solver, and the ``UDFL``
flow file format.

Convention: a field ``U_ab`` satisfies ``x_a(p) ~= x_b(p + U_ab(p))``, with
``U[..., 0]`` the horizontal (column) and ``U[..., 1]`` the vertical (row)
displacement in pixels. ``warp(x_b, U_ab)`` therefore approximates ``x_a``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .imgcore import FormatError, ShapeError, as_frame, luma

FLOW_MAGIC = b"UDFL"


# ---------------------------------------------------------------- warping


def warp_tensor(src: torch.Tensor, flow: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Bilinearly sample ``src`` (N, C, H, W) at p + flow(p).

    ``flow`` is (N, 2, H, W). Samples falling outside the image are clamped to
    the border and flagged invalid in the returned (N, 1, H, W) boolean mask.
    Differentiable with respect to ``src``.
    """
    if src.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise ShapeError("expected src (N, C, H, W) and flow (N, 2, H, W)")
    if src.shape[0] != flow.shape[0] or src.shape[2:] != flow.shape[2:]:
        raise ShapeError(f"src {tuple(src.shape)} and flow {tuple(flow.shape)} disagree")
    n, c, h, w = src.shape
    flow = flow.to(src.dtype)
    ys = torch.arange(h, dtype=src.dtype).view(1, h, 1)
    xs = torch.arange(w, dtype=src.dtype).view(1, 1, w)
    px = xs + flow[:, 0]
    py = ys + flow[:, 1]
    valid = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
    px = px.clamp(0, w - 1)
    py = py.clamp(0, h - 1)
    x0 = px.floor()
    y0 = py.floor()
    fx = (px - x0).unsqueeze(1)
    fy = (py - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = src.reshape(n, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(n, 1, h * w).expand(n, c, h * w)
        return flat.gather(2, idx).reshape(n, c, h, w)

    out = (
        (1 - fy) * ((1 - fx) * gather(y0, x0) + fx * gather(y0, x1))
        + fy * ((1 - fx) * gather(y1, x0) + fx * gather(y1, x1))
    )
    return out, valid.unsqueeze(1)


def warp(src, u) -> tuple[np.ndarray, np.ndarray]:
    """Frame-level warp: (H, W, 3) source and (H, W, 2) flow."""
    src = as_frame(src, "src")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != src.shape[:2] + (2,):
        raise ShapeError(f"flow {u.shape} does not match frame {src.shape}")
    s = torch.from_numpy(src.transpose(2, 0, 1)[None].copy())
    f = torch.from_numpy(u.transpose(2, 0, 1)[None].copy())
    out, valid = warp_tensor(s, f)
    return out[0].numpy().transpose(1, 2, 0), valid[0, 0].numpy()


# ---------------------------------------------------------------- Horn-Schunck

_KX = np.array([[-1.0, 1.0], [-1.0, 1.0]]) * 0.25
_KY = np.array([[-1.0, -1.0], [1.0, 1.0]]) * 0.25
_KT = np.ones((2, 2)) * 0.25
_AVG = np.array([[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]])


def _gray255(frame) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3:
        arr = luma(arr)
    return arr * 255.0


def _hs_single(g1, g2, alpha, iters, u, v):
    conv = lambda img, k: ndimage.correlate(img, k, mode="nearest")  # noqa: E731
    ix = conv(g1, _KX) + conv(g2, _KX)
    iy = conv(g1, _KY) + conv(g2, _KY)
    it = conv(g2, _KT) - conv(g1, _KT)
    denom = alpha**2 + ix**2 + iy**2
    for _ in range(iters):
        ubar = conv(u, _AVG)
        vbar = conv(v, _AVG)
        common = (ix * ubar + iy * vbar + it) / denom
        u = ubar - ix * common
        v = vbar - iy * common
    return u, v


def horn_schunck(a, b, alpha: float = 15.0, iters: int = 100, levels: int | None = None) -> np.ndarray:
    """Dense flow ``U_ab`` (so that a(p) ~= b(p + U_ab(p))).

    Intensities are luma on a 0-255 scale. Frames up to 128 px use a single
    scale; larger frames use a 3-level coarse-to-fine pyramid with warping.
    """
    g1 = _gray255(a)
    g2 = _gray255(b)
    if g1.shape != g2.shape:
        raise ShapeError("frames must have the same shape")
    if levels is None:
        levels = 1 if max(g1.shape) <= 128 else 3

    pyr1, pyr2 = [g1], [g2]
    for _ in range(levels - 1):
        pyr1.append(ndimage.zoom(ndimage.gaussian_filter(pyr1[-1], 1.0), 0.5, order=1))
        pyr2.append(ndimage.zoom(ndimage.gaussian_filter(pyr2[-1], 1.0), 0.5, order=1))

    u = np.zeros_like(pyr1[-1])
    v = np.zeros_like(pyr1[-1])
    for lvl in reversed(range(levels)):
        p1, p2 = pyr1[lvl], pyr2[lvl]
        if u.shape != p1.shape:
            zy = p1.shape[0] / u.shape[0]
            zx = p1.shape[1] / u.shape[1]
            u = ndimage.zoom(u, (zy, zx), order=1)[: p1.shape[0], : p1.shape[1]] * zx
            v = ndimage.zoom(v, (zy, zx), order=1)[: p1.shape[0], : p1.shape[1]] * zy
        if lvl == levels - 1 and levels == 1:
            u, v = _hs_single(p1, p2, alpha, iters, u, v)
            continue
        # solve for the increment on top of the current estimate
        rows, cols = np.mgrid[0 : p1.shape[0], 0 : p1.shape[1]].astype(np.float64)
        p2w = ndimage.map_coordinates(p2, [rows + v, cols + u], order=1, mode="nearest")
        du, dv = _hs_single(p1, p2w, alpha, iters, np.zeros_like(u), np.zeros_like(v))
        u, v = u + du, v + dv
    return np.stack([u, v], axis=-1)


def total_variation(u) -> float:
    u = np.asarray(u, dtype=np.float64)
    return float(np.abs(np.diff(u, axis=0)).sum() + np.abs(np.diff(u, axis=1)).sum())


# ---------------------------------------------------------------- file format


def save_flow(field, path) -> None:
    field = np.asarray(field)
    if field.ndim != 3 or field.shape[2] != 2:
        raise ShapeError(f"flow must be (H, W, 2), got {field.shape}")
    h, w, _ = field.shape
    Path(path).write_bytes(FLOW_MAGIC + struct.pack("<HH", h, w) + field.astype("<f4").tobytes())


def load_flow(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != FLOW_MAGIC:
        raise FormatError(f"{path}: bad flow header")
    h, w = struct.unpack("<HH", blob[4:8])
    if len(blob) - 8 != 8 * h * w:
        raise FormatError(f"{path}: expected {8 * h * w} payload bytes, found {len(blob) - 8}")
    return np.frombuffer(blob[8:], dtype="<f4").reshape(h, w, 2).copy()
