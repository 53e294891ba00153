"""Two-point flux finite-volume discretisation of the Perona-Malik operator.

Cells are pixels with unit spacing, so cell areas, face lengths and centre
distances are all 1. Cell ``(row, col)`` of an ``ny x nx`` image has linear
index ``row * nx + col``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "PixelGrid",
    "gradient_sq",
    "coefficient",
    "transmissibility",
    "face_transmissibilities",
    "assemble_stiffness",
    "stiffness_from_faces",
    "mass_matrix",
]


@dataclass(frozen=True)
class PixelGrid:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one pixel in each direction")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @classmethod
    def like(cls, channel) -> "PixelGrid":
        ny, nx = np.shape(channel)
        return cls(nx=nx, ny=ny)

    def index(self, row, col):
        return np.asarray(row) * self.nx + np.asarray(col)


def _check_dims(channel, grid: PixelGrid | None) -> tuple[np.ndarray, PixelGrid]:
    arr = np.asarray(channel, dtype=np.float64)
    if grid is None:
        if arr.ndim != 2:
            raise ValueError("expected a 2D single-channel array")
        return arr, PixelGrid.like(arr)
    if arr.ndim == 1 and arr.size == grid.n_cells:
        return arr.reshape(grid.shape), grid
    if arr.shape != grid.shape:
        raise ValueError(f"channel shape {arr.shape} does not match grid {grid.shape}")
    return arr, grid


def _diff_axis(u: np.ndarray, axis: int) -> np.ndarray:
    if u.shape[axis] < 2:
        return np.zeros_like(u)
    # central differences inside, one-sided first differences on the border
    return np.gradient(u, axis=axis, edge_order=1)


def gradient_sq(channel, grid: PixelGrid | None = None) -> np.ndarray:
    """Squared discrete gradient magnitude at every cell, shape ``(ny, nx)``."""
    u, _ = _check_dims(channel, grid)
    gx = _diff_axis(u, 1)
    gy = _diff_axis(u, 0)
    return gx * gx + gy * gy


def coefficient(grad_sq, lam: float) -> np.ndarray:
    """Perona-Malik diffusivity ``1 / (1 + |grad I|^2 / lam^2)``."""
    if not lam > 0:
        raise ValueError("edge threshold lambda must be positive")
    g = np.asarray(grad_sq, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("squared gradient must be nonnegative")
    return 1.0 / (1.0 + g / (lam * lam))


def transmissibility(c_i, c_j):
    """Face coefficient: harmonic mean of the two cell diffusivities."""
    c_i = np.asarray(c_i, dtype=np.float64)
    c_j = np.asarray(c_j, dtype=np.float64)
    if np.any(c_i <= 0) or np.any(c_j <= 0):
        raise ValueError("cell coefficients must be positive")
    w = 2.0 / (1.0 / c_i + 1.0 / c_j)
    return w if w.ndim else float(w)


def face_transmissibilities(channel, lam: float, grid: PixelGrid | None = None):
    """Return ``(wx, wy)``: horizontal faces ``(ny, nx-1)`` and vertical ``(ny-1, nx)``."""
    u, grid = _check_dims(channel, grid)
    c = coefficient(gradient_sq(u), lam)
    wx = 2.0 / (1.0 / c[:, :-1] + 1.0 / c[:, 1:])
    wy = 2.0 / (1.0 / c[:-1, :] + 1.0 / c[1:, :])
    return wx, wy


def stiffness_from_faces(wx: np.ndarray, wy: np.ndarray) -> sp.csr_matrix:
    """Assemble the symmetric zero-row-sum operator from face weights."""
    ny, nx = wy.shape[0] + 1, wx.shape[1] + 1
    n = nx * ny
    idx = np.arange(n).reshape(ny, nx)
    left, right = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    down, up = idx[:-1, :].ravel(), idx[1:, :].ravel()
    wx_f, wy_f = wx.ravel(), wy.ravel()

    diag = np.zeros((ny, nx))
    diag[:, :-1] += wx
    diag[:, 1:] += wx
    diag[:-1, :] += wy
    diag[1:, :] += wy

    rows = np.concatenate([left, right, down, up, idx.ravel()])
    cols = np.concatenate([right, left, up, down, idx.ravel()])
    vals = np.concatenate([-wx_f, -wx_f, -wy_f, -wy_f, diag.ravel()])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble_stiffness(channel, lam: float, grid: PixelGrid | None = None) -> sp.csr_matrix:
    """Finite-volume diffusion matrix ``L`` with coefficients frozen at ``channel``."""
    wx, wy = face_transmissibilities(channel, lam, grid)
    return stiffness_from_faces(wx, wy)


def mass_matrix(grid: PixelGrid) -> sp.dia_matrix:
    # unit cells: |K_i| = 1
    return sp.identity(grid.n_cells, format="dia", dtype=np.float64)
