"""Rotation canonicalization with radial beam sampling."""
from .imageops import Image, optimal_padding, pad, rotate
from .beams import BeamMask, build_mask, circular_shift, max_beams, sample
from .angles import circle_loss, loss_to_degrees
from .net import BicModel, ModelConfig
from .train import Regressor, TrainConfig, canonicalize, evaluate

__version__ = "0.1.0"

__all__ = [
    "Image", "optimal_padding", "pad", "rotate",
    "BeamMask", "build_mask", "circular_shift", "max_beams", "sample",
    "circle_loss", "loss_to_degrees",
    "BicModel", "ModelConfig",
    "Regressor", "TrainConfig", "canonicalize", "evaluate",
]
