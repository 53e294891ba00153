"""Perona-Malik denoising at pixel resolution.

Adds 20% relative noise to the synthetic test image, then runs the implicit
finite-volume solver and prints how the error and similarity evolve step by
step. The diffusivity drops near edges, so the shapes stay sharp while the
flat regions are smoothed.

    python demos/01_fine_denoising.py [output_dir]
"""
import sys
from pathlib import Path

import numpy as np

from msdenoise import Image, NoiseSpec, TimeScheme, add_noise, denoise_fine, save_image
from msdenoise.fvm import coefficient, gradient_sq
from msdenoise.metrics import psnr, rrmse, ssim
from msdenoise.synthetic import geometric_channel

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(exist_ok=True)

clean = geometric_channel(256)
noisy = add_noise(Image(clean), NoiseSpec(0.2, seed=42)).channel(0)
print(f"noisy input: rrmse {rrmse(noisy, clean):.4f}  ssim {ssim(noisy, clean):.4f}  "
      f"psnr {psnr(noisy, clean):.2f} dB")

# the coefficient the first step sees: close to 1 in flat areas, small on edges
c = coefficient(gradient_sq(clean), lam=0.3)
print(f"diffusivity on the clean image: min {c.min():.3f}, median {np.median(c):.3f}")

print("\n step     t   rrmse    ssim")


def log(n, u):
    if n % 6 == 0:
        print(f"{n:5d} {n * scheme.tau:5.2f}  {rrmse(u, clean):.4f}  {ssim(u, clean):.4f}")


scheme = TimeScheme(t_max=6.0, n_steps=36)
out = denoise_fine(noisy, scheme, lam=0.3, callback=log)
print(f"\nmass before {noisy.sum():.6f}, after {out.sum():.6f}")

save_image(Image(noisy), out_dir / "fine_noisy.png")
save_image(Image(np.clip(out, 0, 1)), out_dir / "fine_denoised.png")
print(f"images written to {out_dir}/")
