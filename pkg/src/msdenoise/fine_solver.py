"""Implicit Euler time stepping of Perona-Malik diffusion at pixel resolution."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fvm import PixelGrid, assemble_stiffness, mass_matrix
from .image_core import Image, rgb_to_ycrcb, ycrcb_to_rgb
from .sparse_linalg import CG_TOL, cg_solve

__all__ = ["TimeScheme", "implicit_step", "denoise_fine", "denoise_fine_color"]

Observer = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class TimeScheme:
    t_max: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.n_steps > 0 and not self.t_max > 0:
            raise ValueError("t_max must be positive")

    @property
    def tau(self) -> float:
        return self.t_max / self.n_steps if self.n_steps else 0.0

    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)


def implicit_step(I_prev, lam: float, tau: float, grid: PixelGrid | None = None,
                  cg_tol: float = CG_TOL) -> np.ndarray:
    """One linearised step: solve ``(M + tau L(I_prev)) I = M I_prev``.

    Accepts and returns a 2D ``(ny, nx)`` array.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    u = np.asarray(I_prev, dtype=np.float64)
    if grid is None:
        grid = PixelGrid.like(u)
    u = u.reshape(grid.shape)
    L = assemble_stiffness(u, lam, grid)
    M = mass_matrix(grid)
    A = (M + tau * L).tocsr()
    b = M @ u.ravel()
    return cg_solve(A, b, tol=cg_tol).reshape(grid.shape)


def denoise_fine(I0, scheme: TimeScheme, lam: float = 0.3,
                 callback: Optional[Observer] = None, return_trajectory: bool = False,
                 cg_tol: float = CG_TOL):
    """Run ``scheme.n_steps`` implicit steps from the noisy channel ``I0``.

    ``callback(n, I_n)`` is invoked after every step. Returns the final
    channel, or ``(final, [I_0, ..., I_N])`` when ``return_trajectory`` is set.
    """
    u = np.array(I0, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError("expected a 2D single-channel array")
    grid = PixelGrid.like(u)
    traj = [u.copy()] if return_trajectory else None
    for n in range(1, scheme.n_steps + 1):
        u = implicit_step(u, lam, scheme.tau, grid, cg_tol=cg_tol)
        if callback is not None:
            callback(n, u)
        if traj is not None:
            traj.append(u.copy())
    return (u, traj) if return_trajectory else u


def denoise_fine_color(img: Image, scheme: TimeScheme, lam: float = 0.3, callback=None,
                       cg_tol: float = CG_TOL) -> Image:
    """Fine-grid denoising of each YCrCb channel of an RGB :class:`Image`.

    ``callback(channel, n, I_n)`` observes every step of every channel.
    """
    ycc = rgb_to_ycrcb(img)
    chans = []
    for k in range(3):
        cb = None if callback is None else (lambda n, u, k=k: callback(k, n, u))
        chans.append(denoise_fine(ycc.channel(k), scheme, lam, cb, cg_tol=cg_tol))
    return ycrcb_to_rgb(Image.from_channels(chans, clip=True))
