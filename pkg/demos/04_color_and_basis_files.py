"""Colour images and reusable basis files.

The basis is built once from the luminance of the noisy image and shared by
the Y, Cr and Cb channels. It can be written to an MSB1 file and loaded
again for later runs on the same image size.

    python demos/04_color_and_basis_files.py [output_dir]
"""
import sys
from pathlib import Path

from msdenoise import (MultiscaleConfig, NoiseSpec, add_noise, build_basis, denoise_color,
                       deserialize_basis, save_image, serialize_basis)
from msdenoise.image_core import rgb_to_ycrcb
from msdenoise.metrics import report_color
from msdenoise.synthetic import geometric_image

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(exist_ok=True)

clean = geometric_image(256, color=True)
noisy = add_noise(clean, NoiseSpec(0.2, seed=7))

cfg = MultiscaleConfig(m=8, n_steps=5, threads=2)
basis = build_basis(rgb_to_ycrcb(noisy).channel(0), cfg)
path = out_dir / "color_basis.msb"
serialize_basis(basis, path)
print(f"basis: DOF_H = {basis.dof}, file {path} ({path.stat().st_size / 1e6:.1f} MB)")

reloaded = deserialize_basis(path, expected_shape=(256, 256))
out = denoise_color(noisy, cfg, basis=reloaded)

for name, img in (("noisy", noisy), ("denoised", out)):
    q = report_color(img, clean)
    errs = "/".join(f"{100 * e:.2f}" for e in q.rrmse)
    print(f"{name:>9}: RRMSE Y/Cr/Cb (%) {errs}   SSIM {q.ssim:.3f}   PSNR {q.psnr:.2f} dB")

save_image(noisy, out_dir / "color_noisy.png")
save_image(out, out_dir / "color_denoised.png")
