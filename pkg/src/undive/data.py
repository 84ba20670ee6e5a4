"""Training data: crop curation, procedural clean scenes, synthetic paired
images and translated-window videos with exact flow, and the on-disk layouts
used by the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .flow import load_flow, save_flow
from .imgcore import as_frame, frame_name, list_frames, load_depth, load_frame, luma, save_depth, save_frame
from .physics import WaterParams, backscatter_field, backscatter_free, synth_degrade

# ---------------------------------------------------------------- crop curation

HIST_BINS = 32


def uniformity_score(crop) -> float:
    """Negative L1 distance between the 32-bin luma histogram and uniform."""
    y = np.clip(luma(crop), 0.0, 1.0)
    hist, _ = np.histogram(y, bins=HIST_BINS, range=(0.0, 1.0))
    hist = hist / hist.sum()
    return -float(np.abs(hist - 1.0 / HIST_BINS).sum())


def random_crops(frames, crop_size: int, per_frame: int, rng: np.random.Generator) -> list[np.ndarray]:
    crops = []
    for f in frames:
        h, w, _ = f.shape
        if h < crop_size or w < crop_size:
            continue
        for _ in range(per_frame):
            y = int(rng.integers(0, h - crop_size + 1))
            x = int(rng.integers(0, w - crop_size + 1))
            crops.append(f[y : y + crop_size, x : x + crop_size].copy())
    return crops


def select_training_crops(corpus, crop_size: int, fraction: float, per_frame: int = 8, seed: int = 0):
    """Random crops ranked by histogram uniformity; the top ``fraction`` is kept.

    ``corpus`` is a directory of frames or an iterable of frames. Returns the
    kept crops (best first) and their scores.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if isinstance(corpus, (str, Path)):
        frames = [load_frame(p) for p in list_frames(corpus)]
    else:
        frames = [as_frame(f) for f in corpus]
    rng = np.random.default_rng(seed)
    crops = random_crops(frames, crop_size, per_frame, rng)
    if not crops:
        raise ValueError("corpus yields no crops of the requested size")
    scores = np.array([uniformity_score(c) for c in crops])
    order = np.argsort(-scores, kind="stable")
    keep = order[: max(1, int(round(fraction * len(crops))))]
    return [crops[i] for i in keep], scores[keep]


# ---------------------------------------------------------------- procedural scenes


def synthetic_scene(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """A colourful clean scene: smooth gradient background, random ellipses and
    bars, mild texture, and a sprinkling of near-black pixels."""
    yi, xi = np.mgrid[0:h, 0:w]
    yy, xx = yi / max(h, w), xi / max(h, w)
    c0, c1 = rng.uniform(0.2, 0.9, 3), rng.uniform(0.2, 0.9, 3)
    ang = rng.uniform(0, 2 * np.pi)
    t = (np.cos(ang) * xx + np.sin(ang) * yy)[..., None]
    t = (t - t.min()) / max(np.ptp(t), 1e-9)
    img = c0 * (1 - t) + c1 * t
    for _ in range(int(rng.integers(6, 14))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.05, 0.3) * h, rng.uniform(0.05, 0.3) * w
        col = rng.uniform(0.0, 1.0, 3)
        if rng.random() < 0.7:
            m = ((yi - cy) / ry) ** 2 + ((xi - cx) / rx) ** 2 < 1
        else:
            m = (np.abs(yi - cy) < ry / 2) & (np.abs(xi - cx) < rx / 2)
        img[m] = col
    tex = ndimage.gaussian_filter(rng.standard_normal((h, w, 3)), (1.5, 1.5, 0))
    img = img + 0.04 * tex / max(tex.std(), 1e-9)
    img = ndimage.gaussian_filter(img, (0.7, 0.7, 0))
    dark = rng.random((h, w)) < 0.03
    img[dark] = 0.0
    return np.clip(img, 0.0, 1.0)


def random_depth(rng: np.random.Generator, h: int, w: int, mode: str = "smooth", zmin: float = 1.0, zmax: float = 5.0):
    """Smooth random depth field (multi-octave blurred noise) or a linear ramp."""
    if mode == "ramp":
        ang = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        t = np.cos(ang) * xx + np.sin(ang) * yy
    elif mode == "smooth":
        t = np.zeros((h, w))
        for octave, amp in ((max(h, w) / 4, 1.0), (max(h, w) / 8, 0.5), (max(h, w) / 16, 0.25)):
            t += amp * ndimage.gaussian_filter(rng.standard_normal((h, w)), octave, mode="wrap")
    else:
        raise ValueError(f"unknown depth mode {mode!r}")
    t = (t - t.min()) / max(np.ptp(t), 1e-12)
    return zmin + (zmax - zmin) * t


@dataclass
class WaterRanges:
    binf: tuple[float, float] = (0.1, 0.5)
    betab: tuple[float, float] = (0.3, 1.2)
    betad: tuple[float, float] = (0.05, 0.3)

    def sample(self, rng: np.random.Generator) -> WaterParams:
        return WaterParams(rng.uniform(*self.binf, 3), rng.uniform(*self.betab, 3), rng.uniform(*self.betad, 3))


@dataclass
class FixedWater:
    """Drop-in for ``WaterRanges`` that always yields the same parameters."""

    water: WaterParams

    def sample(self, rng: np.random.Generator) -> WaterParams:
        return self.water


# ---------------------------------------------------------------- samples


@dataclass
class PairedSample:
    degraded: np.ndarray
    gt: np.ndarray
    depth: np.ndarray
    water: WaterParams | None = None

    @cached_property
    def clean_input(self) -> np.ndarray:
        """Backscatter-free version of ``degraded`` (estimated from image + depth)."""
        return backscatter_free(self.degraded, self.depth)


@dataclass
class FramePairSample:
    x_t: np.ndarray
    x_tp1: np.ndarray
    depth_t: np.ndarray
    depth_tp1: np.ndarray
    u_fwd: np.ndarray | None = None  # U_{t,t+1}
    u_back: np.ndarray | None = None  # U_{t+1,t}
    gt_t: np.ndarray | None = None
    gt_tp1: np.ndarray | None = None

    @cached_property
    def clean_t(self) -> np.ndarray:
        return backscatter_free(self.x_t, self.depth_t)

    @cached_property
    def clean_tp1(self) -> np.ndarray:
        return backscatter_free(self.x_tp1, self.depth_tp1)

    def first(self) -> PairedSample:
        s = PairedSample(self.x_t, self.gt_t, self.depth_t)
        s.__dict__["clean_input"] = self.clean_t
        return s


@dataclass
class SyntheticVideo:
    frames: list[np.ndarray]
    gt: list[np.ndarray]
    depth: list[np.ndarray]
    offset: tuple[int, int]  # window step (dx, dy) per frame
    water: WaterParams
    flows_back: list[np.ndarray] = field(default_factory=list)  # U_{i+1,i}
    flows_fwd: list[np.ndarray] = field(default_factory=list)  # U_{i,i+1}

    def pairs(self, stride: int = 2) -> list[FramePairSample]:
        """Consecutive frame pairs; stride 2 gives non-overlapping pairs."""
        out = []
        for i in range(0, len(self.frames) - 1, stride):
            out.append(
                FramePairSample(
                    self.frames[i], self.frames[i + 1], self.depth[i], self.depth[i + 1],
                    self.flows_fwd[i], self.flows_back[i], self.gt[i], self.gt[i + 1],
                )
            )
        return out


def make_paired(clean, depth, water: WaterParams) -> PairedSample:
    return PairedSample(synth_degrade(clean, depth, water), as_frame(clean), depth, water)


def make_synthetic_pairs(
    n: int,
    size: int = 64,
    ranges: WaterRanges | None = None,
    depth_mode: str = "smooth",
    seed: int = 0,
    clean_frames=None,
) -> list[PairedSample]:
    """Paired (degraded, clean, depth) samples; clean crops come from
    ``clean_frames`` when given, else from procedural scenes."""
    ranges = ranges or WaterRanges()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        if clean_frames:
            src = clean_frames[i % len(clean_frames)]
            clean = random_crops([src], size, 1, rng)[0]
        else:
            clean = synthetic_scene(rng, size, size)
        depth = random_depth(rng, size, size, depth_mode)
        out.append(make_paired(clean, depth, ranges.sample(rng)))
    return out


def make_synthetic_video(
    n_frames: int,
    size: int = 64,
    offset: tuple[int, int] = (3, 0),
    ranges: WaterRanges | None = None,
    depth_mode: str = "smooth",
    seed: int = 0,
    clean=None,
) -> SyntheticVideo:
    """Slide a ``size`` window over a larger scene by ``offset`` = (dx, dy)
    pixels per frame. Frame i+1 equals frame i displaced by the offset, so
    U_{i+1,i} = offset and U_{i,i+1} = -offset exactly."""
    ranges = ranges or WaterRanges()
    rng = np.random.default_rng(seed)
    dx, dy = offset
    span_x = abs(dx) * (n_frames - 1)
    span_y = abs(dy) * (n_frames - 1)
    H, W = size + span_y, size + span_x
    big = as_frame(clean) if clean is not None else synthetic_scene(rng, H, W)
    if big.shape[0] < H or big.shape[1] < W:
        raise ValueError("clean scene too small for the requested motion")
    zbig = random_depth(rng, big.shape[0], big.shape[1], depth_mode)
    water = ranges.sample(rng)
    y0 = 0 if dy >= 0 else span_y
    x0 = 0 if dx >= 0 else span_x
    frames, gts, depths = [], [], []
    for i in range(n_frames):
        y, x = y0 + i * dy, x0 + i * dx
        g = big[y : y + size, x : x + size]
        z = zbig[y : y + size, x : x + size]
        gts.append(g.copy())
        depths.append(z.copy())
        frames.append(synth_degrade(g, z, water))
    u = np.zeros((size, size, 2))
    u[..., 0], u[..., 1] = dx, dy
    back = [u.copy() for _ in range(n_frames - 1)]
    fwd = [-u for _ in range(n_frames - 1)]
    return SyntheticVideo(frames, gts, depths, (dx, dy), water, back, fwd)


def make_synthetic_dataset(clean_dir=None, water_param_ranges=None, depth_mode="smooth", n=200, size=64, seed=0,
                           kind="pairs", n_frames=8, offset=(3, 0)):
    """Paired samples (``kind="pairs"``) or a list of synthetic videos
    (``kind="videos"``)."""
    clean = [load_frame(p) for p in list_frames(clean_dir)] if clean_dir is not None else None
    if kind == "pairs":
        return make_synthetic_pairs(n, size, water_param_ranges, depth_mode, seed, clean)
    if kind == "videos":
        rng = np.random.default_rng(seed)
        vids = []
        for i in range(n):
            scene = None
            if clean:
                need_h = size + abs(offset[1]) * (n_frames - 1)
                need_w = size + abs(offset[0]) * (n_frames - 1)
                scene = random_crops([clean[i % len(clean)]], max(need_h, need_w), 1, rng)[0]
            vids.append(make_synthetic_video(n_frames, size, offset, water_param_ranges, depth_mode,
                                             int(rng.integers(2**31)), scene))
        return vids
    raise ValueError(f"unknown dataset kind {kind!r}")


# ---------------------------------------------------------------- on-disk layouts


def save_pairs(samples: list[PairedSample], root) -> None:
    """``root/{degraded,gt,depth}/frame_NNNNNN.*`` triple layout."""
    root = Path(root)
    for sub in ("degraded", "gt", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples, start=1):
        save_frame(s.degraded, root / "degraded" / frame_name(i))
        save_frame(s.gt, root / "gt" / frame_name(i))
        save_depth(s.depth, root / "depth" / frame_name(i, ".udpm"))


def _depth_for(depth_dir: Path, stem: str) -> Path:
    for suffix in (".udpm", ".png"):
        p = depth_dir / (stem + suffix)
        if p.is_file():
            return p
    raise FileNotFoundError(f"no depth map for frame {stem} in {depth_dir}")


def load_pairs(root) -> list[PairedSample]:
    root = Path(root)
    out = []
    for p in list_frames(root / "degraded"):
        out.append(PairedSample(load_frame(p), load_frame(root / "gt" / p.name), load_depth(_depth_for(root / "depth", p.stem))))
    if not out:
        raise ValueError(f"no paired samples under {root}")
    return out


def save_video(video: SyntheticVideo, root) -> None:
    """``root/{frames,gt,depth,flow_fwd,flow_back}``; flow files are named after
    the first frame of their pair."""
    root = Path(root)
    for sub in ("frames", "gt", "depth", "flow_fwd", "flow_back"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, (f, g, z) in enumerate(zip(video.frames, video.gt, video.depth), start=1):
        save_frame(f, root / "frames" / frame_name(i))
        save_frame(g, root / "gt" / frame_name(i))
        save_depth(z, root / "depth" / frame_name(i, ".udpm"))
    for i, (uf, ub) in enumerate(zip(video.flows_fwd, video.flows_back), start=1):
        save_flow(uf, root / "flow_fwd" / frame_name(i, ".udfl"))
        save_flow(ub, root / "flow_back" / frame_name(i, ".udfl"))


def load_video_pairs(root, stride: int = 2) -> list[FramePairSample]:
    """Frame pairs from a video directory; flows and ground truth are used
    when present."""
    root = Path(root)
    paths = list_frames(root / "frames")
    frames = [load_frame(p) for p in paths]
    depths = [load_depth(_depth_for(root / "depth", p.stem)) for p in paths]
    gt_dir = root / "gt"
    gts = [load_frame(gt_dir / p.name) if (gt_dir / p.name).is_file() else None for p in paths]

    def flow(sub, stem):
        p = root / sub / (stem + ".udfl")
        return load_flow(p).astype(np.float64) if p.is_file() else None

    out = []
    for i in range(0, len(paths) - 1, stride):
        stem = paths[i].stem
        out.append(FramePairSample(frames[i], frames[i + 1], depths[i], depths[i + 1],
                                   flow("flow_fwd", stem), flow("flow_back", stem), gts[i], gts[i + 1]))
    return out


def true_backscatter(sample: PairedSample) -> np.ndarray:
    return backscatter_field(sample.depth, sample.water)
