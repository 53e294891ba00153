"""Synthetic test images: flat geometric shapes on a uniform background."""
from __future__ import annotations

import numpy as np

from .image_core import Image

__all__ = ["geometric_channel", "geometric_image", "GRAY_LEVELS", "COLOR_LEVELS"]

# background, disc, square, triangle
GRAY_LEVELS = (0.45, 0.62, 0.30, 0.55)
COLOR_LEVELS = (
    (0.40, 0.45, 0.55),
    (0.62, 0.50, 0.35),
    (0.30, 0.42, 0.36),
    (0.52, 0.60, 0.58),
)


def _masks(n_rows: int, n_cols: int):
    y, x = np.mgrid[0:n_rows, 0:n_cols] + 0.5
    y = y / n_rows
    x = x / n_cols
    disc = (x - 0.30) ** 2 + (y - 0.32) ** 2 <= 0.18 ** 2
    square = (np.abs(x - 0.72) <= 0.15) & (np.abs(y - 0.30) <= 0.15)
    # triangle with apex up
    tri = (y <= 0.88) & (y - 0.55 >= 1.4 * np.abs(x - 0.50) - 0.0) & (y >= 0.55)
    return disc, square, tri


def geometric_channel(n_rows: int = 512, n_cols: int | None = None,
                      levels=GRAY_LEVELS) -> np.ndarray:
    """Piecewise-constant intensities: a disc, a square and a triangle."""
    n_cols = n_rows if n_cols is None else n_cols
    bg, *shape_levels = levels
    out = np.full((n_rows, n_cols), float(bg))
    for mask, val in zip(_masks(n_rows, n_cols), shape_levels):
        out[mask] = val
    return out


def geometric_image(n_rows: int = 512, n_cols: int | None = None, color: bool = False) -> Image:
    if not color:
        return Image(geometric_channel(n_rows, n_cols))
    chans = [geometric_channel(n_rows, n_cols, [lv[k] for lv in COLOR_LEVELS]) for k in range(3)]
    return Image.from_channels(chans)
