"""Image quality metrics (UCIQE, UIQM and its components, PSNR), a
flow-based temporal warp error, and per-video quality reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .flow import horn_schunck, warp
from .imgcore import ShapeError, as_frame, list_frames, load_frame, rgb_to_hsv, rgb_to_lab

UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_COEFFS = (-0.0268, 0.1586)
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
TRIM = 0.1
BLOCK = 8
PSNR_CAP = 99.0


def _std(x: np.ndarray) -> float:
    # shifted by the first sample so constant inputs give exactly 0
    d = x.ravel() - x.ravel()[0]
    return float(np.sqrt(max(np.mean(d * d) - np.mean(d) ** 2, 0.0)))


def uciqe(frame) -> float:
    """0.4680 sigma_chroma + 0.2745 con_luma + 0.2576 mean HSV saturation."""
    frame = as_frame(frame)
    lab = rgb_to_lab(frame)
    chroma = np.hypot(lab[..., 1], lab[..., 2])
    L = np.sort(lab[..., 0].ravel())
    k = max(1, int(round(0.01 * L.size)))
    con_l = (L[-k:].mean() - L[:k].mean()) / 100.0
    sat = rgb_to_hsv(frame)[..., 1].mean()
    c1, c2, c3 = UCIQE_COEFFS
    return float(c1 * _std(chroma) + c2 * con_l + c3 * sat)


# ---------------------------------------------------------------- UIQM


def _trimmed_mean(x: np.ndarray, alpha: float = TRIM) -> float:
    x = np.sort(x.ravel())
    n = x.size
    lo = int(math.ceil(alpha * n))
    hi = int(math.floor(alpha * n))
    return float(x[lo : n - hi].mean())


def uicm(frame) -> float:
    x = as_frame(frame) * 255.0
    rg = x[..., 0] - x[..., 1]
    yb = 0.5 * (x[..., 0] + x[..., 1]) - x[..., 2]
    mu_rg, mu_yb = _trimmed_mean(rg), _trimmed_mean(yb)
    var_rg = float(np.mean((rg - mu_rg) ** 2))
    var_yb = float(np.mean((yb - mu_yb) ** 2))
    a, b = UICM_COEFFS
    return a * math.hypot(mu_rg, mu_yb) + b * math.sqrt(var_rg + var_yb)


def _blocks(x: np.ndarray, size: int) -> np.ndarray:
    """Non-overlapping size x size blocks; partial border blocks are dropped."""
    h, w = x.shape[:2]
    k2, k1 = h // size, w // size
    if k1 == 0 or k2 == 0:
        raise ValueError(f"frame {h}x{w} is smaller than one {size}x{size} block")
    x = x[: k2 * size, : k1 * size]
    rest = x.shape[2:]
    return x.reshape(k2, size, k1, size, *rest).swapaxes(1, 2).reshape(k2 * k1, -1)


def _eme(x: np.ndarray, size: int) -> float:
    b = _blocks(x, size)
    mx, mn = b.max(axis=1), b.min(axis=1)
    ok = (mn > 0) & (mx > 0)
    terms = np.zeros_like(mx)
    terms[ok] = np.log(mx[ok] / mn[ok])
    return float(2.0 / len(b) * terms.sum())


def _sobel_mag(ch: np.ndarray) -> np.ndarray:
    mag = np.hypot(ndimage.sobel(ch, 0), ndimage.sobel(ch, 1))
    peak = mag.max()
    return mag * (255.0 / peak) if peak > 0 else mag


def uism(frame, block: int = BLOCK) -> float:
    x = as_frame(frame) * 255.0
    total = 0.0
    for c, lam in enumerate(LUMA_WEIGHTS):
        ch = x[..., c]
        total += lam * _eme(_sobel_mag(ch) * ch, block)
    return total


def uiconm(frame, block: int = BLOCK) -> float:
    """Log-AMEE block contrast of the intensity image."""
    x = as_frame(frame).mean(axis=-1) * 255.0
    b = _blocks(x, block)
    mx, mn = b.max(axis=1), b.min(axis=1)
    top, bot = mx - mn, mx + mn
    ok = (top > 0) & (bot > 0)
    r = top[ok] / bot[ok]
    return float(-np.sum(r * np.log(r)) / len(b)) + 0.0


def uiqm_from_components(uicm_v: float, uism_v: float, uiconm_v: float) -> float:
    c1, c2, c3 = UIQM_COEFFS
    return c1 * uicm_v + c2 * uism_v + c3 * uiconm_v


def uiqm(frame, block: int = BLOCK) -> float:
    return uiqm_from_components(uicm(frame), uism(frame, block), uiconm(frame, block))


def psnr(a, b) -> float:
    a, b = as_frame(a), as_frame(b)
    if a.shape != b.shape:
        raise ShapeError(f"{a.shape} vs {b.shape}")
    # extended precision keeps e.g. a uniform 0.1 error at exactly 20 dB
    diff = (a - b).astype(np.longdouble)
    mse = np.mean(diff * diff)
    if mse == 0.0:
        return PSNR_CAP
    return float(-10.0 * np.log10(mse))


# ---------------------------------------------------------------- temporal


def temporal_warp_error(frames, flows) -> float:
    """Mean over consecutive pairs of the valid-pixel MSE between
    warp(frame_i, flows[i]) and frame_{i+1}; flows[i] is U_{i+1,i}."""
    frames = list(frames)
    flows = list(flows)
    if len(flows) != len(frames) - 1:
        raise ValueError(f"{len(frames)} frames need {len(frames) - 1} flows, got {len(flows)}")
    if not flows:
        raise ValueError("need at least two frames")
    errs = []
    for i, u in enumerate(flows):
        warped, valid = warp(frames[i], u)
        d = (warped - as_frame(frames[i + 1]))[valid]
        errs.append(float(np.mean(d**2)) if d.size else 0.0)
    return float(np.mean(errs))


# ---------------------------------------------------------------- reports

IMAGE_METRICS = {
    "uciqe": uciqe,
    "uiqm": uiqm,
    "uicm": uicm,
    "uism": uism,
    "uiconm": uiconm,
}


@dataclass
class QualityReport:
    video_id: str
    resolution: tuple[int, int]
    frames: list[dict] = field(default_factory=list)  # {"frame": id, metric: value, ...}
    temporal_warp_error: float | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def metric_names(self) -> list[str]:
        return [k for k in self.frames[0] if k != "frame"] if self.frames else []

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in self.metric_names():
            vals = np.array([r[name] for r in self.frames], dtype=np.float64)
            out[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        return out

    def to_text(self) -> str:
        """JSON lines: one record per frame, then a summary footer."""
        lines = [json.dumps({"frame": r["frame"], "metrics": {k: r[k] for k in r if k != "frame"}}) for r in self.frames]
        footer = {
            "summary": self.summary(),
            "temporal_warp_error": self.temporal_warp_error,
            "meta": {"video_id": self.video_id, "frame_count": self.frame_count, "resolution": list(self.resolution)},
        }
        lines.append(json.dumps(footer))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "QualityReport":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records or "summary" not in records[-1]:
            raise ValueError("report footer missing")
        footer = records[-1]
        meta = footer["meta"]
        frames = [{"frame": r["frame"], **r["metrics"]} for r in records[:-1]]
        return cls(meta["video_id"], tuple(meta["resolution"]), frames, footer["temporal_warp_error"])

    def write_csv(self, path) -> None:
        names = self.metric_names()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", *names])
            for r in self.frames:
                writer.writerow([r["frame"], *(repr(r[n]) for n in names)])


def evaluate_video(frame_dir, metrics=None, temporal: bool = True, flow_alpha: float = 15.0, flow_iters: int = 100):
    paths = list_frames(frame_dir)
    if not paths:
        raise ValueError(f"no frames in {frame_dir}")
    names = list(metrics or IMAGE_METRICS)
    frames = [load_frame(p) for p in paths]
    report = QualityReport(Path(frame_dir).name, frames[0].shape[:2])
    for p, f in zip(paths, frames):
        report.frames.append({"frame": p.stem, **{n: float(IMAGE_METRICS[n](f)) for n in names}})
    if temporal and len(frames) > 1:
        flows = [horn_schunck(frames[i + 1], frames[i], flow_alpha, flow_iters) for i in range(len(frames) - 1)]
        report.temporal_warp_error = temporal_warp_error(frames, flows)
    return report
