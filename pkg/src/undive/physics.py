"""Underwater image formation: synthetic degradation, backscatter fitting
from image + depth, and backscatter removal."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .imgcore import ShapeError, as_depth, as_frame

CHANNELS = "rgb"


class FitError(RuntimeError):
    """Too few usable samples to fit the backscatter curve."""


@dataclass
class WaterParams:
    binf: np.ndarray  # veiling light per channel, [0, 1]
    betab: np.ndarray  # backscatter coefficient per channel, 1/m
    betad: np.ndarray  # direct-signal attenuation per channel, 1/m

    def __post_init__(self):
        self.binf = np.broadcast_to(np.asarray(self.binf, dtype=np.float64), (3,)).copy()
        self.betab = np.broadcast_to(np.asarray(self.betab, dtype=np.float64), (3,)).copy()
        self.betad = np.broadcast_to(np.asarray(self.betad, dtype=np.float64), (3,)).copy()
        for v in (self.binf, self.betab, self.betad):
            if not np.all(np.isfinite(v)):
                raise ValueError("water parameters must be finite")
        if np.any(self.binf < 0) or np.any(self.binf > 1):
            raise ValueError("veiling light must lie in [0, 1]")
        if np.any(self.betab <= 0) or np.any(self.betad <= 0):
            raise ValueError("attenuation coefficients must be positive")

    def __eq__(self, other):
        if not isinstance(other, WaterParams):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict[str, float]:
        out = {}
        for key in ("binf", "betab", "betad"):
            for c, v in zip(CHANNELS, getattr(self, key)):
                out[f"{key}_{c}"] = float(v)
        return out

    @classmethod
    def from_dict(cls, d) -> "WaterParams":
        get = lambda key: [float(d[f"{key}_{c}"]) for c in CHANNELS]  # noqa: E731
        return cls(get("binf"), get("betab"), get("betad"))


def backscatter_field(depth, w: WaterParams) -> np.ndarray:
    z = np.asarray(depth, dtype=np.float64)[..., None]
    return w.binf * (1.0 - np.exp(-w.betab * z))


def direct_signal(clean, depth, w: WaterParams) -> np.ndarray:
    z = np.asarray(depth, dtype=np.float64)[..., None]
    return np.asarray(clean, dtype=np.float64) * np.exp(-w.betad * z)


def synth_degrade(clean, depth, w: WaterParams) -> np.ndarray:
    """I = J exp(-beta_D z) + B_inf (1 - exp(-beta_B z)), clipped to [0, 1]."""
    clean = as_frame(clean, "clean")
    z = np.asarray(depth, dtype=np.float64)
    if z.shape != clean.shape[:2]:
        raise ShapeError(f"depth {z.shape} does not match frame {clean.shape[:2]}")
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise ValueError("depth must be finite and non-negative")
    return np.clip(direct_signal(clean, z, w) + backscatter_field(z, w), 0.0, 1.0)


# ---------------------------------------------------------------- estimation


@dataclass
class BackscatterFit:
    binf: np.ndarray
    betab: np.ndarray
    jprime: np.ndarray
    betaprime: np.ndarray
    degenerate: bool = False
    residual: np.ndarray | None = None


BOUNDS_LO = np.array([0.0, 0.01, 0.0, 0.01])
BOUNDS_HI = np.array([1.0, 5.0, 1.0, 5.0])
INIT = np.array([0.2, 0.5, 0.1, 0.5])
# A depth bin with no truly black pixel contributes a bright sample; the
# soft-L1 loss, with a scale of one 8-bit code, keeps one such bin from
# dragging the whole curve.
ROBUST_SCALE = 1.0 / 255.0


def backscatter_model(z, binf, betab, jprime, betaprime):
    return binf * (1.0 - np.exp(-betab * z)) + jprime * np.exp(-betaprime * z)


def dark_samples(channel: np.ndarray, depth: np.ndarray, bins: int = 10, fraction: float = 0.01):
    """Darkest ``fraction`` of pixels in each of ``bins`` equal-width depth bins."""
    edges = np.linspace(depth.min(), depth.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, depth.ravel(), side="right") - 1, 0, bins - 1)
    vals = channel.ravel()
    zs = depth.ravel()
    sample_z, sample_i = [], []
    for b in range(bins):
        sel = np.flatnonzero(idx == b)
        if sel.size == 0:
            continue
        k = max(1, int(np.ceil(sel.size * fraction)))
        darkest = sel[np.argsort(vals[sel], kind="stable")[:k]]
        sample_z.append(zs[darkest])
        sample_i.append(vals[darkest])
    if not sample_z:
        return np.empty(0), np.empty(0)
    return np.concatenate(sample_z), np.concatenate(sample_i)


def _fit_channel(z, v, restarts: int, rng: np.random.Generator):
    if z.size < 4:
        raise FitError(f"only {z.size} usable samples")

    def resid(p):
        return backscatter_model(z, *p) - v

    starts = [INIT] + [rng.uniform(BOUNDS_LO, BOUNDS_HI) for _ in range(restarts)]
    best = None
    for x0 in starts:
        res = least_squares(resid, x0, bounds=(BOUNDS_LO, BOUNDS_HI), method="trf", loss="soft_l1",
                            f_scale=ROBUST_SCALE)
        if best is None or res.cost < best.cost:
            best = res
    return best.x, float(np.sqrt(np.mean(np.square(best.fun))))


def estimate_backscatter(
    frame,
    depth,
    bins: int = 10,
    fraction: float = 0.01,
    restarts: int = 3,
    seed: int = 0,
) -> tuple[np.ndarray, BackscatterFit]:
    """Fit B(z) = B_inf (1 - e^{-beta_B z}) + J' e^{-beta' z} per channel.

    Returns the backscatter field clipped to [0, I_c] and the fitted
    parameters. A depth map with no spread yields the darkest-percentile
    value per channel and ``degenerate=True``.
    """
    frame = as_frame(frame)
    depth = as_depth(depth, frame.shape[:2])
    rng = np.random.default_rng(seed)

    if np.ptp(depth) <= 1e-9 * max(1.0, float(depth.max())):
        level = np.array([np.percentile(frame[..., c], 100 * fraction) for c in range(3)])
        field = np.minimum(np.broadcast_to(level, frame.shape), frame)
        nan = np.full(3, np.nan)
        return field, BackscatterFit(level, nan, nan.copy(), nan.copy(), degenerate=True)

    params, resid = [], []
    for c in range(3):
        z, v = dark_samples(frame[..., c], depth, bins, fraction)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p, r = _fit_channel(z, v, restarts, rng)
        params.append(p)
        resid.append(r)
    params = np.array(params)
    field = np.stack([backscatter_model(depth, *params[c]) for c in range(3)], axis=-1)
    field = np.clip(field, 0.0, frame)
    fit = BackscatterFit(params[:, 0], params[:, 1], params[:, 2], params[:, 3], residual=np.array(resid))
    return field, fit


def fit_backscatter_shared(frames, depths, bins: int = 10, fraction: float = 0.01, restarts: int = 3,
                           seed: int = 0) -> BackscatterFit:
    """One backscatter curve per channel fitted to dark samples pooled over
    several frames (e.g. a whole video).

    Frames with constant depth add no samples; when every frame is flat the
    pooled darkest-percentile level is returned with ``degenerate=True``.
    """
    frames, depths = list(frames), list(depths)
    if not frames or len(frames) != len(depths):
        raise ValueError("need matching, non-empty frame and depth lists")
    frames = [as_frame(f) for f in frames]
    depths = [as_depth(z, f.shape[:2]) for f, z in zip(frames, depths)]
    varied = [(f, z) for f, z in zip(frames, depths) if np.ptp(z) > 1e-9 * max(1.0, float(z.max()))]
    if not varied:
        level = np.array([np.percentile(np.concatenate([f[..., c].ravel() for f in frames]), 100 * fraction)
                          for c in range(3)])
        nan = np.full(3, np.nan)
        return BackscatterFit(level, nan, nan.copy(), nan.copy(), degenerate=True)
    rng = np.random.default_rng(seed)
    params, resid = [], []
    for c in range(3):
        pooled = [dark_samples(f[..., c], z, bins, fraction) for f, z in varied]
        z = np.concatenate([p[0] for p in pooled])
        v = np.concatenate([p[1] for p in pooled])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p, r = _fit_channel(z, v, restarts, rng)
        params.append(p)
        resid.append(r)
    params = np.array(params)
    return BackscatterFit(params[:, 0], params[:, 1], params[:, 2], params[:, 3], residual=np.array(resid))


def backscatter_from_fit(frame, depth, fit: BackscatterFit) -> np.ndarray:
    """Evaluate a fitted curve at every pixel's depth, clipped to [0, I_c]."""
    frame = as_frame(frame)
    depth = as_depth(depth, frame.shape[:2])
    if fit.degenerate:
        return np.minimum(np.broadcast_to(fit.binf, frame.shape), frame)
    field = np.stack([backscatter_model(depth, fit.binf[c], fit.betab[c], fit.jprime[c], fit.betaprime[c])
                      for c in range(3)], axis=-1)
    return np.clip(field, 0.0, frame)


def remove_backscatter(frame, b) -> np.ndarray:
    frame = as_frame(frame)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != frame.shape:
        raise ShapeError(f"backscatter {b.shape} does not match frame {frame.shape}")
    return np.clip(frame - b, 0.0, 1.0)


def backscatter_free(frame, depth, **kwargs) -> np.ndarray:
    """Estimate and subtract backscatter; falls back to B = 0 when the fit fails."""
    try:
        field, _ = estimate_backscatter(frame, depth, **kwargs)
    except FitError:
        return as_frame(frame).copy()
    return remove_backscatter(frame, field)
