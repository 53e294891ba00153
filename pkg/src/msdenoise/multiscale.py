"""Spectral multiscale (GMsFEM) coarse solver for Perona-Malik denoising.

Offline stage, once per image: for every coarse vertex the noisy image is
denoised on the vertex neighbourhood ``omega_i``, a local generalised
eigenproblem is solved on the denoised patch, and the leading eigenvectors,
multiplied by the vertex's bilinear partition-of-unity function, become rows
of the projection matrix ``R``.

Online stage: implicit time stepping of the Galerkin system
``R (M + tau L(R^T u_H)) R^T`` whose diffusion matrix is refreshed from the
reconstructed fine image at every step.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .fine_solver import TimeScheme, denoise_fine
from .fvm import assemble_stiffness, face_transmissibilities
from .image_core import Image, rgb_to_ycrcb, ycrcb_to_rgb
from .sparse_linalg import (CG_TOL, EIGEN_TOL, ConvergenceError, EigenPairs,
                            smallest_eigenpairs, spd_solve, triple_product)

__all__ = [
    "CoarseGrid",
    "PartitionOfUnity",
    "MultiscaleBasis",
    "MultiscaleConfig",
    "BasisFormatError",
    "CoarseSolveError",
    "build_coarse_grid",
    "partition_of_unity",
    "local_denoise",
    "local_spectral_basis",
    "build_projection",
    "build_basis",
    "CoarseOperator",
    "coarse_denoise",
    "denoise_multiscale",
    "denoise_color",
    "serialize_basis",
    "deserialize_basis",
]


class CoarseSolveError(ConvergenceError):
    pass


class BasisFormatError(ValueError):
    pass


# ---------------------------------------------------------------- coarse grid

@dataclass(frozen=True)
class CoarseGrid:
    """Uniform agglomeration of ``cell_px x cell_px`` pixel blocks.

    Vertices are numbered row-major, ``i = ky * (ncx + 1) + kx``; vertex ``i``
    sits at pixel corner ``(ky * cell_px, kx * cell_px)``.
    """

    nx: int
    ny: int
    cell_px: int

    @property
    def ncx(self) -> int:
        return self.nx // self.cell_px

    @property
    def ncy(self) -> int:
        return self.ny // self.cell_px

    @property
    def n_cells(self) -> int:
        return self.ncx * self.ncy

    @property
    def n_nodes(self) -> int:
        return (self.ncx + 1) * (self.ncy + 1)

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    def node_coords(self, i: int) -> tuple[int, int]:
        ky, kx = divmod(i, self.ncx + 1)
        return ky, kx

    def node_index(self, ky: int, kx: int) -> int:
        return ky * (self.ncx + 1) + kx

    def omega_bounds(self, i: int) -> tuple[int, int, int, int]:
        """Pixel rectangle ``(r0, r1, c0, c1)`` (half-open) of ``omega_i``."""
        ky, kx = self.node_coords(i)
        H = self.cell_px
        return (max(0, (ky - 1) * H), min(self.ny, (ky + 1) * H),
                max(0, (kx - 1) * H), min(self.nx, (kx + 1) * H))

    def omega_cells(self, i: int) -> list[tuple[int, int]]:
        ky, kx = self.node_coords(i)
        return [(cy, cx)
                for cy in (ky - 1, ky) if 0 <= cy < self.ncy
                for cx in (kx - 1, kx) if 0 <= cx < self.ncx]

    def omega_pixels(self, i: int) -> np.ndarray:
        r0, r1, c0, c1 = self.omega_bounds(i)
        rows, cols = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
        return (rows * self.nx + cols).ravel()

    def cell_nodes(self, cy: int, cx: int) -> tuple[int, int, int, int]:
        """Corner vertices of a coarse cell: (top-left, top-right, bottom-left, bottom-right)."""
        return (self.node_index(cy, cx), self.node_index(cy, cx + 1),
                self.node_index(cy + 1, cx), self.node_index(cy + 1, cx + 1))

    def cell_of_pixel(self, row, col):
        return np.asarray(row) // self.cell_px, np.asarray(col) // self.cell_px


def build_coarse_grid(nx: int, ny: int, cell_px: int) -> CoarseGrid:
    if cell_px < 1:
        raise ValueError("coarse cell size must be positive")
    if nx % cell_px or ny % cell_px:
        raise ValueError(f"image {nx}x{ny} is not divisible into {cell_px}-pixel coarse cells")
    return CoarseGrid(nx=nx, ny=ny, cell_px=cell_px)


@dataclass(frozen=True)
class PartitionOfUnity:
    """Bilinear vertex hats sampled at pixel centres, stored as 1D factors.

    ``hx[kx, col] * hy[ky, row]`` is the weight of vertex ``(ky, kx)`` at pixel
    ``(row, col)``.
    """

    grid: CoarseGrid
    hx: np.ndarray
    hy: np.ndarray

    def weights(self, i: int) -> np.ndarray:
        """Weights of vertex ``i`` on its ``omega_i`` rectangle."""
        ky, kx = self.grid.node_coords(i)
        r0, r1, c0, c1 = self.grid.omega_bounds(i)
        return np.outer(self.hy[ky, r0:r1], self.hx[kx, c0:c1])

    def full(self, i: int) -> np.ndarray:
        ky, kx = self.grid.node_coords(i)
        return np.outer(self.hy[ky], self.hx[kx])

    def total(self) -> np.ndarray:
        out = np.zeros((self.grid.ny, self.grid.nx))
        for i in range(self.grid.n_nodes):
            r0, r1, c0, c1 = self.grid.omega_bounds(i)
            out[r0:r1, c0:c1] += self.weights(i)
        return out


def _hats_1d(n_px: int, cell_px: int) -> np.ndarray:
    nodes = np.arange(n_px // cell_px + 1) * cell_px
    centres = np.arange(n_px) + 0.5
    h = np.maximum(0.0, 1.0 - np.abs(centres[None, :] - nodes[:, None]) / cell_px)
    return h / h.sum(axis=0, keepdims=True)


def partition_of_unity(cg: CoarseGrid) -> PartitionOfUnity:
    return PartitionOfUnity(grid=cg, hx=_hats_1d(cg.nx, cg.cell_px), hy=_hats_1d(cg.ny, cg.cell_px))


# ---------------------------------------------------------------- offline stage

def local_denoise(I0, bounds, lam: float = 0.3, local_tmax: float = 5.0,
                  local_steps: int = 30, cg_tol: float = CG_TOL) -> np.ndarray:
    """Denoise the ``(r0, r1, c0, c1)`` block of ``I0`` with zero-flux borders."""
    r0, r1, c0, c1 = bounds
    patch = np.asarray(I0, dtype=np.float64)[r0:r1, c0:c1]
    if patch.size == 0:
        raise ValueError("empty local domain")
    return denoise_fine(patch, TimeScheme(local_tmax, local_steps), lam, cg_tol=cg_tol)


def local_spectral_basis(I_tilde, m: int, lam: float = 0.3, tol: float = EIGEN_TOL,
                         seed: int = 0) -> EigenPairs:
    """Smallest eigenpairs of ``S psi = mu D psi`` with ``D = diag(S)`` built from ``I_tilde``."""
    I_tilde = np.asarray(I_tilde, dtype=np.float64)
    if m < 1 or m > I_tilde.size:
        raise ValueError(f"cannot take {m} eigenvectors on a {I_tilde.size}-pixel domain")
    S = assemble_stiffness(I_tilde, lam)
    d = S.diagonal()
    if np.any(d <= 0):
        raise ValueError("local stiffness has an isolated cell (zero diagonal)")
    return smallest_eigenpairs(S, d, m, tol=tol, seed=seed)


@dataclass
class MultiscaleBasis:
    """Projection matrix ``R`` stored per vertex.

    ``node_vectors[i]`` has shape ``(m, h_i, w_i)``: the partition-of-unity
    weighted eigenvectors on the ``omega_i`` rectangle. Row ``i * m + l`` of
    ``R`` is ``node_vectors[i][l]`` scattered to fine pixel indices.
    """

    grid: CoarseGrid
    m: int
    node_vectors: list
    eigenvalues: Optional[np.ndarray] = None
    _R: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)
    _op: Optional["CoarseOperator"] = field(default=None, repr=False, compare=False)

    @property
    def dof(self) -> int:
        return self.m * self.grid.n_nodes

    @property
    def R(self) -> sp.csr_matrix:
        if self._R is None:
            self._R = self._assemble_R()
        return self._R

    def _assemble_R(self) -> sp.csr_matrix:
        g = self.grid
        indptr = [0]
        indices, data = [], []
        for i, vecs in enumerate(self.node_vectors):
            pix = g.omega_pixels(i).astype(np.int32)
            flat = vecs.reshape(self.m, -1)
            for l in range(self.m):
                indices.append(pix)
                data.append(flat[l])
                indptr.append(indptr[-1] + pix.size)
        return sp.csr_matrix(
            (np.concatenate(data), np.concatenate(indices), np.asarray(indptr, dtype=np.int64)),
            shape=(self.dof, g.n_pixels))

    def coarse_operator(self) -> "CoarseOperator":
        """Cached per-cell tables for fast Galerkin assembly (depends only on the basis)."""
        if self._op is None:
            self._op = CoarseOperator(self)
        return self._op

    def prepare(self) -> "MultiscaleBasis":
        """Build ``R`` and the coarse operator tables up front."""
        self.R
        self.coarse_operator()
        return self

    def truncate(self, m: int) -> "MultiscaleBasis":
        """Keep the ``m`` leading basis functions per vertex."""
        if not 1 <= m <= self.m:
            raise ValueError(f"cannot truncate a {self.m}-function basis to {m}")
        ev = None if self.eigenvalues is None else self.eigenvalues[:, :m]
        return MultiscaleBasis(self.grid, m, [v[:m] for v in self.node_vectors], ev)


def build_projection(cg: CoarseGrid, pou: PartitionOfUnity, bases, m: int) -> MultiscaleBasis:
    """Multiply each vertex's leading ``m`` eigenvectors by its hat function."""
    if len(bases) != cg.n_nodes:
        raise ValueError(f"expected {cg.n_nodes} local bases, got {len(bases)}")
    vectors, evals = [], np.empty((cg.n_nodes, m))
    for i, pairs in enumerate(bases):
        if len(pairs) < m:
            raise ValueError(f"vertex {i} has only {len(pairs)} eigenpairs, need {m}")
        r0, r1, c0, c1 = cg.omega_bounds(i)
        shape = (r1 - r0, c1 - c0)
        chi = pou.weights(i)
        psi = pairs.vectors[:, :m].T.reshape(m, *shape)
        vectors.append(chi[None, :, :] * psi)
        evals[i] = pairs.values[:m]
    return MultiscaleBasis(cg, m, vectors, evals)


@dataclass(frozen=True)
class MultiscaleConfig:
    lam: float = 0.3
    t_max: float = 5.0
    n_steps: int = 5
    cell_px: int = 32
    m: int = 16
    local_tmax: float = 5.0
    local_steps: int = 30
    local_denoising: bool = True
    cg_tol: float = CG_TOL
    eig_tol: float = EIGEN_TOL
    seed: int = 0
    threads: int = 1

    @property
    def scheme(self) -> TimeScheme:
        return TimeScheme(self.t_max, self.n_steps)


def _node_task(I0, cg, i, config: MultiscaleConfig) -> EigenPairs:
    bounds = cg.omega_bounds(i)
    if config.local_denoising and config.local_steps > 0:
        patch = local_denoise(I0, bounds, config.lam, config.local_tmax,
                              config.local_steps, config.cg_tol)
    else:
        r0, r1, c0, c1 = bounds
        patch = I0[r0:r1, c0:c1]
    return local_spectral_basis(patch, config.m, config.lam, config.eig_tol,
                                seed=config.seed + i)


def build_basis(I0, config: MultiscaleConfig = MultiscaleConfig(),
                progress: Optional[Callable[[int, EigenPairs], None]] = None) -> MultiscaleBasis:
    """Offline stage: local denoising and eigenproblems on every ``omega_i``.

    Vertex tasks are independent and run on ``config.threads`` workers; results
    are gathered in vertex order, so the basis does not depend on scheduling.
    """
    I0 = np.asarray(I0, dtype=np.float64)
    ny, nx = I0.shape
    cg = build_coarse_grid(nx, ny, config.cell_px)
    pou = partition_of_unity(cg)
    smallest = min((r1 - r0) * (c1 - c0) for r0, r1, c0, c1 in map(cg.omega_bounds, range(cg.n_nodes)))
    if config.m > smallest:
        raise ValueError(f"m={config.m} exceeds the {smallest} pixels of the smallest local domain")

    def task(i):
        return _node_task(I0, cg, i, config)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            bases = list(pool.map(task, range(cg.n_nodes)))
    else:
        bases = [task(i) for i in range(cg.n_nodes)]
    if progress is not None:
        for i, pairs in enumerate(bases):
            progress(i, pairs)
    return build_projection(cg, pou, bases, config.m)


# ---------------------------------------------------------------- online stage

class CoarseOperator:
    """Assembles ``R M R^T`` and ``R L R^T`` coarse-cell by coarse-cell.

    ``L`` is a sum of rank-one face terms ``w_f g_f g_f^T`` with
    ``g_f = R (e_i - e_j)``. Inside a coarse cell only its four corner
    vertices are active, so the face sum reduces to small dense products over
    a per-cell table ``phi`` of the active basis functions. Faces straddling
    two cells use the six vertices the pair shares. Block entries are
    scattered into a CSR pattern that is fixed for the lifetime of the basis.
    """

    def __init__(self, basis: MultiscaleBasis):
        self.basis = basis
        g, m = basis.grid, basis.m
        H = g.cell_px
        self.k = 4 * m
        ncell = g.n_cells
        phi = np.empty((ncell, H, H, self.k))
        cell_dofs = np.empty((ncell, self.k), dtype=np.int64)
        for cy in range(g.ncy):
            for cx in range(g.ncx):
                c = cy * g.ncx + cx
                for a, node in enumerate(g.cell_nodes(cy, cx)):
                    r0, _, c0, _ = g.omega_bounds(node)
                    ro, co = cy * H - r0, cx * H - c0
                    vec = basis.node_vectors[node][:, ro:ro + H, co:co + H]
                    phi[c, :, :, a * m:(a + 1) * m] = vec.transpose(1, 2, 0)
                    cell_dofs[c, a * m:(a + 1) * m] = node * m + np.arange(m)
        self.phi = phi
        self.cell_dofs = cell_dofs
        # differences across the interior faces of each cell: horizontal then vertical
        self.grad = np.concatenate([
            (phi[:, :, 1:, :] - phi[:, :, :-1, :]).reshape(ncell, -1, self.k),
            (phi[:, 1:, :, :] - phi[:, :-1, :, :]).reshape(ncell, -1, self.k)], axis=1)

        # cross-cell pairs; the 6m union layout is [left/top cell's 4 vertices, 2 new]
        top_left, top_right, bot_left, bot_right = 0, 1, 2, 3
        lm = np.arange(m)
        self.xpairs = np.array([(cy * g.ncx + cx, cy * g.ncx + cx + 1)
                                for cy in range(g.ncy) for cx in range(g.ncx - 1)], dtype=np.int64)
        self.ypairs = np.array([(cy * g.ncx + cx, (cy + 1) * g.ncx + cx)
                                for cy in range(g.ncy - 1) for cx in range(g.ncx)], dtype=np.int64)
        # slot of each of the second cell's vertices in the union layout
        slots_x = [top_right, 4, bot_right, 5]
        slots_y = [bot_left, bot_right, 4, 5]
        self.map_x = np.concatenate([s * m + lm for s in slots_x])
        self.map_y = np.concatenate([s * m + lm for s in slots_y])
        self.xdofs = self._union_dofs(self.xpairs, self.map_x, 6 * m)
        self.ydofs = self._union_dofs(self.ypairs, self.map_y, 6 * m)

        self._build_pattern()
        flat = phi.reshape(ncell, H * H, self.k)
        self.mass_data = self._scatter(np.matmul(flat.transpose(0, 2, 1), flat), None, None)

    def _union_dofs(self, pairs, slot_map, width):
        if len(pairs) == 0:
            return np.empty((0, width), dtype=np.int64)
        dofs = np.empty((len(pairs), width), dtype=np.int64)
        dofs[:, :self.k] = self.cell_dofs[pairs[:, 0]]
        dofs[:, slot_map] = self.cell_dofs[pairs[:, 1]]
        return dofs

    def _build_pattern(self):
        n = self.basis.dof
        groups = [self.cell_dofs, self.xdofs, self.ydofs]
        keys = [(d[:, :, None] * n + d[:, None, :]).ravel() for d in groups]
        self._sizes = [k.size for k in keys]
        uniq, inverse = np.unique(np.concatenate(keys), return_inverse=True)
        self._inverse = inverse.astype(np.int64)
        rows, cols = np.divmod(uniq, n)
        self.indices = cols.astype(np.int32)
        self.indptr = np.searchsorted(rows, np.arange(n + 1)).astype(np.int64)
        self.nnz = uniq.size

    def _scatter(self, cell_blocks, xblocks, yblocks) -> np.ndarray:
        parts = [cell_blocks.ravel()]
        for blocks, size in ((xblocks, self._sizes[1]), (yblocks, self._sizes[2])):
            parts.append(np.zeros(size) if blocks is None else blocks.ravel())
        return np.bincount(self._inverse, weights=np.concatenate(parts), minlength=self.nnz)

    def matrix(self, data) -> sp.csr_matrix:
        n = self.basis.dof
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def mass(self) -> sp.csr_matrix:
        return self.matrix(self.mass_data)

    def stiffness_data(self, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
        """Entries of ``R L R^T`` for face weights ``wx (ny, nx-1)``, ``wy (ny-1, nx)``."""
        g, H, k = self.basis.grid, self.basis.grid.cell_px, self.k
        ncell = g.n_cells
        cell_blocks = np.empty((ncell, k, k))
        # interior faces of each coarse cell
        wx_full = np.zeros((g.ny, g.nx))
        wx_full[:, :-1] = wx
        wy_full = np.zeros((g.ny, g.nx))
        wy_full[:-1, :] = wy
        wxc = wx_full.reshape(g.ncy, H, g.ncx, H).transpose(0, 2, 1, 3).reshape(ncell, H, H)
        wyc = wy_full.reshape(g.ncy, H, g.ncx, H).transpose(0, 2, 1, 3).reshape(ncell, H, H)
        w_in = np.concatenate([wxc[:, :, :-1].reshape(ncell, -1),
                               wyc[:, :-1, :].reshape(ncell, -1)], axis=1)
        for c in range(ncell):
            g_c = self.grad[c]
            cell_blocks[c] = (g_c.T * w_in[c]) @ g_c

        xblocks = self._cross_blocks(self.xpairs, self.map_x, wxc, axis=1)
        yblocks = self._cross_blocks(self.ypairs, self.map_y, wyc, axis=0)
        return self._scatter(cell_blocks, xblocks, yblocks)

    def _cross_blocks(self, pairs, slot_map, wc, axis):
        if len(pairs) == 0:
            return None
        k = self.k
        width = k + 2 * self.basis.m
        if axis == 1:
            first = self.phi[pairs[:, 0], :, -1, :]    # right column of the left cell
            second = self.phi[pairs[:, 1], :, 0, :]    # left column of the right cell
            w = wc[pairs[:, 0], :, -1]
        else:
            first = self.phi[pairs[:, 0], -1, :, :]    # bottom row of the upper cell
            second = self.phi[pairs[:, 1], 0, :, :]
            w = wc[pairs[:, 0], -1, :]
        h = np.zeros((len(pairs), first.shape[1], width))
        h[:, :, :k] = first
        h[:, :, slot_map] -= second
        return np.matmul((h * w[:, :, None]).transpose(0, 2, 1), h)

    def stiffness(self, wx, wy) -> sp.csr_matrix:
        return self.matrix(self.stiffness_data(wx, wy))


def _coarse_solve(A, b, tol, what):
    try:
        return spd_solve(A, b, tol=tol)
    except ConvergenceError as exc:
        raise CoarseSolveError(
            f"coarse {what} solve failed ({exc}); the multiscale basis may be "
            f"nearly rank deficient, try fewer basis functions per vertex",
            residual=exc.residual, iterations=exc.iterations) from exc


def coarse_denoise(I0, basis: MultiscaleBasis, scheme: TimeScheme, lam: float = 0.3,
                   callback=None, cg_tol: float = CG_TOL, assembly: str = "blocked",
                   return_coarse: bool = False):
    """Online stage: implicit Galerkin time stepping in the span of ``R``.

    ``callback(n, I_ms)`` receives the reconstructed fine image after each
    step. Returns the final reconstruction clamped to ``[0, 1]``.
    ``assembly="sparse"`` forms the coarse operators with a generic sparse
    triple product instead of the per-cell blocks.
    """
    I0 = np.asarray(I0, dtype=np.float64)
    g = basis.grid
    if I0.shape != (g.ny, g.nx):
        raise ValueError(f"basis built for {g.ny}x{g.nx} pixels, image is {I0.shape}")
    R = basis.R
    if assembly == "blocked":
        op = basis.coarse_operator()
        M_H = op.mass()

        def coarse_matrix(u):
            wx, wy = face_transmissibilities(u, lam)
            return op.matrix(op.mass_data + scheme.tau * op.stiffness_data(wx, wy))
    elif assembly == "sparse":
        M_H = triple_product(R, sp.identity(g.n_pixels, format="csr"))

        def coarse_matrix(u):
            return (M_H + scheme.tau * triple_product(R, assemble_stiffness(u, lam))).tocsr()
    else:
        raise ValueError(f"unknown assembly mode {assembly!r}")

    u_H = _coarse_solve(M_H, R @ I0.ravel(), cg_tol, "initial projection")
    u = (R.T @ u_H).reshape(g.ny, g.nx)
    for n in range(1, scheme.n_steps + 1):
        A_H = coarse_matrix(u)
        u_H = _coarse_solve(A_H, M_H @ u_H, cg_tol, f"step {n}")
        u = (R.T @ u_H).reshape(g.ny, g.nx)
        if callback is not None:
            callback(n, u)
    out = np.clip(u, 0.0, 1.0)
    return (out, u_H) if return_coarse else out


def denoise_multiscale(I0, config: MultiscaleConfig = MultiscaleConfig(),
                       basis: Optional[MultiscaleBasis] = None, callback=None):
    """Offline + online stages on one channel; returns ``(denoised, basis)``."""
    if basis is None:
        basis = build_basis(I0, config)
    if basis.m != config.m:
        basis = basis.truncate(config.m)
    out = coarse_denoise(I0, basis, config.scheme, config.lam, callback, config.cg_tol)
    return out, basis


def denoise_color(img: Image, config: MultiscaleConfig = MultiscaleConfig(),
                  basis: Optional[MultiscaleBasis] = None, callback=None,
                  threads: Optional[int] = None) -> Image:
    """Denoise an RGB image channel-wise in YCrCb with one luminance-built basis.

    ``callback(channel, n, I_ms)`` is forwarded per channel. Channels share
    no mutable state and are run on ``threads`` workers (default
    ``config.threads``).
    """
    if img.channels != 3:
        raise ValueError("denoise_color needs a 3-channel image")
    ycc = rgb_to_ycrcb(img)
    if basis is None:
        # luminance of the noisy image is its grayscale representation
        basis = build_basis(ycc.channel(0), config)
    if basis.m != config.m:
        basis = basis.truncate(config.m)
    basis.prepare()  # shared tables are built once, before any worker touches them

    def run(k):
        cb = None if callback is None else (lambda n, u, k=k: callback(k, n, u))
        return coarse_denoise(ycc.channel(k), basis, config.scheme, config.lam, cb, config.cg_tol)

    workers = config.threads if threads is None else threads
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(3, workers)) as pool:
            chans = list(pool.map(run, range(3)))
    else:
        chans = [run(k) for k in range(3)]
    out = ycrcb_to_rgb(Image.from_channels(chans, clip=True))
    return out


# ---------------------------------------------------------------- basis files

MAGIC = b"MSB1"
VERSION = 1
_HEADER = struct.Struct("<6I")


def serialize_basis(basis: MultiscaleBasis, path) -> None:
    """Write the basis in the MSB1 format (atomically, via a temporary file).

    Layout: ``b"MSB1"``, then little-endian u32 ``version, nx, ny, cell_px,
    n_nodes, m``; then for each row of ``R`` a u32 support length, the u32
    pixel indices and the f64 values; finally the u32 CRC-32 of every byte
    after the magic.
    """
    g = basis.grid
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".msb-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            head = _HEADER.pack(VERSION, g.nx, g.ny, g.cell_px, g.n_nodes, basis.m)
            crc = zlib.crc32(head)
            fh.write(head)
            for i, vecs in enumerate(basis.node_vectors):
                pix = g.omega_pixels(i).astype("<u4")
                pix_bytes = struct.pack("<I", pix.size) + pix.tobytes()
                for row in vecs.reshape(basis.m, -1):
                    chunk = pix_bytes + row.astype("<f8").tobytes()
                    crc = zlib.crc32(chunk, crc)
                    fh.write(chunk)
            fh.write(struct.pack("<I", crc & 0xFFFFFFFF))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def deserialize_basis(path, expected_shape: Optional[tuple[int, int]] = None) -> MultiscaleBasis:
    """Read an MSB1 file; ``expected_shape=(ny, nx)`` rejects bases for other images."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise BasisFormatError("not a multiscale basis file (bad magic)")
    if len(buf) < 4 + _HEADER.size + 4:
        raise BasisFormatError("truncated basis file")
    version, nx, ny, cell_px, n_nodes, m = _HEADER.unpack_from(buf, 4)
    if version != VERSION:
        raise BasisFormatError(f"unsupported basis file version {version}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[4:-4]) & 0xFFFFFFFF != crc:
        raise BasisFormatError("basis file checksum mismatch (truncated or corrupt)")
    if expected_shape is not None and tuple(expected_shape) != (ny, nx):
        raise BasisFormatError(
            f"basis was built for a {ny}x{nx} image, not {expected_shape[0]}x{expected_shape[1]}")
    try:
        g = build_coarse_grid(nx, ny, cell_px)
    except ValueError as exc:
        raise BasisFormatError(str(exc)) from exc
    if g.n_nodes != n_nodes or m < 1:
        raise BasisFormatError("basis header is inconsistent with its coarse grid")

    pos = 4 + _HEADER.size
    end = len(buf) - 4
    vectors = []
    for i in range(n_nodes):
        r0, r1, c0, c1 = g.omega_bounds(i)
        expected = g.omega_pixels(i)
        rows = np.empty((m, expected.size))
        for l in range(m):
            if pos + 4 > end:
                raise BasisFormatError("truncated basis file")
            (count,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            stop = pos + count * 12
            if stop > end:
                raise BasisFormatError("truncated basis file")
            pix = np.frombuffer(buf, dtype="<u4", count=count, offset=pos)
            vals = np.frombuffer(buf, dtype="<f8", count=count, offset=pos + 4 * count)
            pos = stop
            if count != expected.size or not np.array_equal(pix, expected):
                raise BasisFormatError(f"row {i * m + l} support does not match vertex {i}")
            rows[l] = vals
        vectors.append(rows.reshape(m, r1 - r0, c1 - c0))
    if pos != end:
        raise BasisFormatError("trailing data in basis file")
    return MultiscaleBasis(g, m, vectors)
