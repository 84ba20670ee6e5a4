"""Two-stage underwater video enhancement: a diffusion prior whose frozen
encoder guides a lightweight illumination network, trained first on paired
images and then fine-tuned for temporal consistency."""

from .checkpoint import ModelCheckpoint
from .config import PhaseSettings, RunConfig, TrainingSchedule, load_config
from .diffusion import PriorSettings, UNetConfig, extract_encoder, train_prior
from .enhancer import Enhancer, EnhancerConfig, enhance_frame
from .imgcore import FormatError, ShapeError
from .losses import LossWeights
from .physics import WaterParams, estimate_backscatter, synth_degrade
from .training import train_spatial, train_temporal
from .video import enhance_video

__all__ = [
    "Enhancer",
    "EnhancerConfig",
    "FormatError",
    "LossWeights",
    "ModelCheckpoint",
    "PhaseSettings",
    "PriorSettings",
    "RunConfig",
    "ShapeError",
    "TrainingSchedule",
    "UNetConfig",
    "WaterParams",
    "enhance_frame",
    "enhance_video",
    "estimate_backscatter",
    "extract_encoder",
    "load_config",
    "synth_degrade",
    "train_prior",
    "train_spatial",
    "train_temporal",
]
