"""Progressive GAN training and evaluation for grayscale images."""

from ._core import (
    Checkpoint,
    ConfigError,
    ProganError,
    Trainer,
    View,
    center_fit,
    laplacian_pyramid,
    list_checkpoints,
    load_checkpoint,
    load_image,
    ms_ssim,
    msssim_diversity,
    phantom,
    preprocess,
    run_cli,
    save_image,
    sliced_wasserstein,
    ssim,
    swd,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "ProganError",
    "Trainer",
    "View",
    "center_fit",
    "laplacian_pyramid",
    "list_checkpoints",
    "load_checkpoint",
    "load_image",
    "ms_ssim",
    "msssim_diversity",
    "phantom",
    "preprocess",
    "run_cli",
    "save_image",
    "sliced_wasserstein",
    "ssim",
    "swd",
]
