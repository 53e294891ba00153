"""Full-reference image quality metrics on normalised intensities.

SSIM here is the single-window (global statistics) form; PSNR uses a peak
value of 1 and the per-pixel mean squared error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_core import Image, rgb_to_ycrcb

__all__ = ["QualityReport", "rrmse", "ssim", "psnr", "report", "report_color",
           "SSIM_K1", "SSIM_K2"]

SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 1.0


def _pair(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    return u.ravel(), v.ravel()


def rrmse(u, v) -> float:
    """Relative L2 error ``||u - v|| / ||v||`` against the reference ``v``."""
    u, v = _pair(u, v)
    ref = np.linalg.norm(v)
    if ref == 0.0:
        raise ValueError("reference image has zero norm")
    return float(np.linalg.norm(u - v) / ref)


def ssim(u, v) -> float:
    u, v = _pair(u, v)
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_u, mu_v = u.mean(), v.mean()
    du, dv = u - mu_u, v - mu_v
    var_u, var_v = np.mean(du * du), np.mean(dv * dv)
    cov = np.mean(du * dv)
    sd_u, sd_v = np.sqrt(var_u), np.sqrt(var_v)
    lum = (2 * mu_u * mu_v + c1) / (mu_u ** 2 + mu_v ** 2 + c1)
    con = (2 * sd_u * sd_v + c2) / (var_u + var_v + c2)
    struct = (cov + c2 / 2) / (sd_u * sd_v + c2 / 2)
    return float(lum * con * struct)


def psnr(u, v, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    u, v = _pair(u, v)
    mse = np.mean((u - v) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


@dataclass(frozen=True)
class QualityReport:
    rrmse: tuple
    ssim: float
    psnr: float

    def as_row(self) -> dict:
        row = {}
        for name, val in zip(("rrmse_y", "rrmse_cr", "rrmse_cb"), self.rrmse):
            row[name] = val
        row["ssim"] = self.ssim
        row["psnr"] = self.psnr
        return row


def report(u, v) -> QualityReport:
    """Metrics for a single-channel result ``u`` against reference ``v``."""
    return QualityReport(rrmse=(rrmse(u, v),), ssim=ssim(u, v), psnr=psnr(u, v))


def report_color(u: Image, v: Image) -> QualityReport:
    """Per-channel YCrCb RRMSE; SSIM and PSNR on the luminance channel."""
    if u.channels != 3 or v.channels != 3:
        raise ValueError("report_color needs two 3-channel images")
    if u.data.shape != v.data.shape:
        raise ValueError(f"shape mismatch: {u.data.shape} vs {v.data.shape}")
    yu, yv = rgb_to_ycrcb(u), rgb_to_ycrcb(v)
    errs = tuple(rrmse(yu.channel(k), yv.channel(k)) for k in range(3))
    return QualityReport(rrmse=errs, ssim=ssim(yu.channel(0), yv.channel(0)),
                         psnr=psnr(yu.channel(0), yv.channel(0)))
