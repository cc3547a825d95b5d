"""Semi-supervised domain adaptation for RGB to hyperspectral reconstruction.

Spectral density masking of the student's unlabeled view, endmember-anchored
alignment of predicted spectra, and a mean-teacher training loop around a
small analytically differentiated reconstruction model.
"""

from .core import (
    DEFAULT_WAVELENGTHS,
    BandPartition,
    CameraResponse,
    RgbImage,
    SpectralCube,
    partition_from_wavelengths,
    rgb_from_cube,
)
from .errors import SpectralAdaptError
from .metrics import MetricReport, psnr, sam, ssim_cube, ssim_global
from .model import Architecture, LossWeights, ModelParams
from .trainer import TrainConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_WAVELENGTHS",
    "Architecture",
    "BandPartition",
    "CameraResponse",
    "LossWeights",
    "MetricReport",
    "ModelParams",
    "RgbImage",
    "SpectralAdaptError",
    "SpectralCube",
    "TrainConfig",
    "partition_from_wavelengths",
    "psnr",
    "rgb_from_cube",
    "sam",
    "ssim_cube",
    "ssim_global",
    "train_loop",
]
