"""Run configuration: dataclass defaults plus an INI-style key/value file.

Sections and keys mirror the dataclass fields::

    [run]       seed
    [unet]      base_channels, depth, time_embed_dim, num_res_blocks, max_mult
    [enhancer]  guide_channels, fusion_channels, encoder_stage_selection,
                epsilon_stability, illumination_floor, illumination_channels
    [loss]      lambda1, lambda2, lambda3, lambda_t
    [prior]     epochs, lr, batch_size, crop, T, beta_start, beta_end
    [spatial]   epochs, batch_size, lr
    [temporal]  epochs, batch_size, lr
    [water]     binf_r/g/b, betab_r/g/b, betad_r/g/b  (optional fixed water)
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .diffusion import PriorSettings, UNetConfig
from .enhancer import EnhancerConfig
from .losses import LossWeights
from .physics import WaterParams


@dataclass
class PhaseSettings:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("phase settings need epochs >= 0, batch_size >= 1, lr > 0")


@dataclass
class TrainingSchedule:
    prior: PriorSettings = field(default_factory=PriorSettings)
    spatial: PhaseSettings = field(default_factory=lambda: PhaseSettings(100, 64, 1e-4))
    temporal: PhaseSettings = field(default_factory=lambda: PhaseSettings(100, 24, 1e-4))


@dataclass
class RunConfig:
    seed: int = 0
    unet: UNetConfig = field(default_factory=UNetConfig.full_scale)
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig.full_scale)
    loss: LossWeights = field(default_factory=LossWeights)
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    water: WaterParams | None = None

    @classmethod
    def desk(cls) -> "RunConfig":
        """Small settings that train on a laptop CPU in minutes."""
        sched = TrainingSchedule(
            prior=PriorSettings(epochs=30, lr=1e-3, batch_size=24, crop=32, T=50, beta_start=1e-4, beta_end=0.02),
            spatial=PhaseSettings(epochs=40, batch_size=8, lr=5e-3),
            temporal=PhaseSettings(epochs=10, batch_size=8, lr=5e-4),
        )
        return cls(unet=UNetConfig(), enhancer=EnhancerConfig(), schedule=sched)


_SECTIONS = {
    "unet": ("unet",),
    "enhancer": ("enhancer",),
    "loss": ("loss",),
    "prior": ("schedule", "prior"),
    "spatial": ("schedule", "spatial"),
    "temporal": ("schedule", "temporal"),
}


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("none", "all", ""):
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _get(cfg: RunConfig, path):
    obj = cfg
    for p in path:
        obj = getattr(obj, p)
    return obj


def _set(cfg: RunConfig, path, value) -> RunConfig:
    if len(path) == 1:
        return replace(cfg, **{path[0]: value})
    return replace(cfg, **{path[0]: _set(getattr(cfg, path[0]), path[1:], value)})


def apply_overrides(cfg: RunConfig, items: dict[str, dict[str, str]]) -> RunConfig:
    """Apply {section: {key: raw value}} onto ``cfg``; unknown keys are errors."""
    for section, values in items.items():
        if not values:
            continue
        if section == "run":
            for key, raw in values.items():
                if key != "seed":
                    raise ValueError(f"unknown key run.{key}")
                cfg = replace(cfg, seed=int(_parse_value(raw)))
            continue
        if section == "water":
            base = cfg.water.to_dict() if cfg.water else {}
            base.update({k: float(v) for k, v in values.items()})
            cfg = replace(cfg, water=WaterParams.from_dict(base))
            continue
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        path = _SECTIONS[section]
        obj = _get(cfg, path)
        names = {f.name for f in fields(obj)}
        updates = {}
        for key, raw in values.items():
            if key not in names:
                raise ValueError(f"unknown key {section}.{key}")
            val = _parse_value(raw)
            current = getattr(obj, key)
            if isinstance(current, float) and isinstance(val, int):
                val = float(val)
            updates[key] = val
        cfg = _set(cfg, path, replace(obj, **updates))
    return cfg


def load_config(path=None, overrides: list[str] | None = None, base: RunConfig | None = None) -> RunConfig:
    """Read a config file (optional) and ``section.key=value`` overrides."""
    cfg = base or RunConfig()
    items: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
        items = {s: dict(parser[s]) for s in parser.sections()}
    cfg = apply_overrides(cfg, items)
    extra: dict[str, dict[str, str]] = {}
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ValueError(f"override {item!r} must look like section.key=value")
        extra.setdefault(section.strip(), {})[name.strip()] = raw
    return apply_overrides(cfg, extra)


def dump_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["run"] = {"seed": str(cfg.seed)}
    for section, attr in _SECTIONS.items():
        parser[section] = {k: json.dumps(v) for k, v in asdict(_get(cfg, attr)).items()}
    if cfg.water is not None:
        parser["water"] = {k: repr(v) for k, v in cfg.water.to_dict().items()}
    with open(Path(path), "w", encoding="utf-8") as fh:
        parser.write(fh)
