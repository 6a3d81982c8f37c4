"""Learned inversion by splitting: a U-Net undoes the measurement operator,
a pixel-shuffle denoiser projects its output toward natural images, and
classical Wiener / ADMM solvers serve as baselines.
"""

from .config import ExperimentConfig
from .metrics import psnr, ssim
from .networks import DAEConfig, UNetConfig, build_dae, build_discriminator, build_unet, inversenet_forward
from .solvers import ADMMConfig, WienerConfig, admm_solve, wiener_deconvolve
from .training import TrainConfig, TrainingState, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "psnr",
    "ssim",
    "UNetConfig",
    "DAEConfig",
    "build_unet",
    "build_dae",
    "build_discriminator",
    "inversenet_forward",
    "WienerConfig",
    "ADMMConfig",
    "wiener_deconvolve",
    "admm_solve",
    "TrainConfig",
    "TrainingState",
    "train_step",
    "train_loop",
]
