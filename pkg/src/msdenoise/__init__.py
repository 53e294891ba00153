"""Perona-Malik image denoising with a pixel-level finite-volume solver and a
spectral multiscale (GMsFEM) coarse solver."""
from .fine_solver import TimeScheme, denoise_fine, denoise_fine_color
from .image_core import Image, NoiseSpec, add_noise, load_image, save_image
from .metrics import psnr, rrmse, ssim
from .multiscale import (MultiscaleBasis, MultiscaleConfig, build_basis, build_coarse_grid,
                         coarse_denoise, denoise_color, denoise_multiscale,
                         deserialize_basis, serialize_basis)

__version__ = "0.1.0"
