"""Frame, depth and colour-space primitives shared by every other module.

Frames are ``float64`` arrays of shape ``(H, W, 3)`` in RGB order with values
in ``[0, 1]``. Depth maps are ``(H, W)`` arrays of strictly positive metres.
Videos are directories of zero-padded numbered frames.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import cv2
import numpy as np
import torch

__all__ = [
    "FormatError",
    "ShapeError",
    "as_frame",
    "as_depth",
    "load_frame",
    "save_frame",
    "load_depth",
    "save_depth",
    "rgb_to_lab",
    "lab_to_rgb",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "luma",
    "downsample2",
    "frame_name",
    "list_frames",
    "to_tensor",
    "from_tensor",
]

DEPTH_MAGIC = b"UDPM"
FRAME_PATTERN = "frame_{:06d}"

# sRGB primaries -> CIE XYZ, D65 white
_RGB2XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
_D65 = np.array([0.95047, 1.0, 1.08883])
_LUMA = np.array([0.299, 0.587, 0.114])


class FormatError(ValueError):
    """A file exists but does not decode to the expected layout."""


class ShapeError(ValueError):
    """Array dimensions are incompatible with the requested operation."""


def as_frame(data, name: str = "frame") -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_depth(data, shape: tuple[int, int] | None = None) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"depth must have shape (H, W), got {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeError(f"depth shape {arr.shape} does not match frame {tuple(shape)}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("depth entries must be finite and strictly positive")
    return arr


# ---------------------------------------------------------------- raster IO


def load_frame(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"cannot decode raster {path}")
    if raw.ndim != 3 or raw.shape[2] not in (3, 4):
        raise FormatError(f"{path} is not an RGB raster (shape {raw.shape})")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"{path}: unsupported sample type {raw.dtype}")
    rgb = cv2.cvtColor(raw[:, :, :3], cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float64) / scale


def save_frame(frame, path, bit_depth: int = 8) -> None:
    """Write a frame as an 8- or 16-bit raster; format follows the suffix."""
    frame = as_frame(frame)
    if bit_depth == 8:
        q = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        q = np.round(np.clip(frame, 0.0, 1.0) * 65535.0).astype(np.uint16)
    else:
        raise ValueError("bit_depth must be 8 or 16")
    path = Path(path)
    if not cv2.imwrite(str(path), cv2.cvtColor(q, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")


def load_depth(path) -> np.ndarray:
    """Read a depth map.

    ``.udpm`` files hold an 8-byte header (magic, u16 height, u16 width)
    followed by row-major little-endian float32 metres. Any other suffix is
    read as a 16-bit grayscale raster scaled by ``scale`` from a JSON sidecar
    ``<path>.json``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    if path.suffix == ".udpm":
        blob = path.read_bytes()
        if len(blob) < 8 or blob[:4] != DEPTH_MAGIC:
            raise FormatError(f"{path}: bad depth header")
        h, w = struct.unpack("<HH", blob[4:8])
        payload = blob[8:]
        if len(payload) != 4 * h * w:
            raise FormatError(f"{path}: header declares {h}x{w} but holds {len(payload) // 4} floats")
        data = np.frombuffer(payload, dtype="<f4").reshape(h, w)
        return as_depth(data.astype(np.float64))
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None or raw.ndim != 2:
        raise FormatError(f"{path}: expected a grayscale depth raster")
    sidecar = path.with_name(path.name + ".json")
    scale = json.loads(sidecar.read_text())["scale"] if sidecar.is_file() else 1.0
    return as_depth(raw.astype(np.float64) * float(scale))


def save_depth(depth, path) -> None:
    path = Path(path)
    depth = as_depth(depth)
    h, w = depth.shape
    if path.suffix == ".udpm":
        path.write_bytes(DEPTH_MAGIC + struct.pack("<HH", h, w) + depth.astype("<f4").tobytes())
        return
    scale = float(depth.max()) / 65535.0
    q = np.clip(np.round(depth / scale), 1, 65535).astype(np.uint16)
    if not cv2.imwrite(str(path), q):
        raise OSError(f"could not write {path}")
    path.with_name(path.name + ".json").write_text(json.dumps({"scale": scale}))


def frame_name(index: int, suffix: str = ".png") -> str:
    return FRAME_PATTERN.format(index) + suffix


def list_frames(directory, suffixes=(".png", ".ppm", ".tif", ".tiff")) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in suffixes)


# ---------------------------------------------------------------- colour


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def rgb_to_lab(frame) -> np.ndarray:
    """sRGB to CIELab under D65; L in [0, 100]."""
    rgb = as_frame(frame)
    xyz = _srgb_to_linear(rgb) @ _RGB2XYZ.T / _D65
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3 * delta**2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    delta = 6.0 / 29.0
    xyz = np.where(f > delta, f**3, 3 * delta**2 * (f - 4.0 / 29.0)) * _D65
    return np.clip(_linear_to_srgb(xyz @ _XYZ2RGB.T), 0.0, 1.0)


def rgb_to_hsv(frame) -> np.ndarray:
    rgb = as_frame(frame)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=-1)
    vmin = rgb.min(axis=-1)
    span = vmax - vmin
    safe_span = np.where(span > 0, span, 1.0)
    sat = np.where(vmax > 0, span / np.where(vmax > 0, vmax, 1.0), 0.0)
    hue = np.select(
        [span == 0, vmax == r, vmax == g],
        [0.0, ((g - b) / safe_span) % 6.0, (b - r) / safe_span + 2.0],
        (r - g) / safe_span + 4.0,
    )
    return np.stack([hue / 6.0, sat, vmax], axis=-1)


def hsv_to_rgb(hsv) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h6 = (hsv[..., 0] % 1.0) * 6.0
    s, v = hsv[..., 1], hsv[..., 2]
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def luma(frame) -> np.ndarray:
    return np.asarray(frame, dtype=np.float64) @ _LUMA


# ---------------------------------------------------------------- resampling


def downsample2(frame) -> np.ndarray:
    """2x2 box-mean downsampling."""
    arr = as_frame(frame)
    h, w, _ = arr.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample2 needs even dimensions, got {h}x{w}")
    # fixed summation order keeps the result independent of memory layout
    return (arr[0::2, 0::2] + arr[0::2, 1::2] + arr[1::2, 0::2] + arr[1::2, 1::2]) * 0.25


def to_tensor(frame, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 3) or (N, H, W, 3) array -> (N, 3, H, W) tensor."""
    arr = np.asarray(frame)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def from_tensor(t: torch.Tensor) -> np.ndarray:
    """(N, 3, H, W) or (3, H, W) tensor -> float64 array in HWC layout."""
    arr = t.detach().cpu().double().numpy()
    if arr.ndim == 3:
        return arr.transpose(1, 2, 0)
    return arr.transpose(0, 2, 3, 1)
