"""Symmetric sparse solvers: Jacobi-preconditioned CG and smallest generalised eigenpairs.

Matrices are ``scipy.sparse`` CSR arrays; nothing here needs more than
matrix-vector products, so any object with ``@`` and ``.diagonal()`` works.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "ConvergenceError",
    "EigenPairs",
    "as_csr",
    "cg_solve",
    "smallest_eigenpairs",
    "dense_generalized_eigh",
    "triple_product",
    "half_bandwidth",
    "banded_cholesky_solve",
    "spd_solve",
    "DENSE_EIGEN_LIMIT",
]

CG_TOL = 1e-8
EIGEN_TOL = 1e-6
DENSE_EIGEN_LIMIT = 1024


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def as_csr(a) -> sp.csr_matrix:
    mat = sp.csr_matrix(a, dtype=np.float64)
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def cg_solve(A, b, tol: float = CG_TOL, max_iter: int | None = None,
             precondition: bool = True) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A``.

    Starts from ``x = 0`` and stops once ``||b - A x|| <= tol * ||b||``; the
    check uses the true residual, not the recurrence. Raises
    :class:`ConvergenceError` after ``max_iter`` iterations (default ``10 n``).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} incompatible with rhs of length {n}")
    if max_iter is None:
        max_iter = 10 * n
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    target = tol * bnorm

    if precondition:
        d = np.asarray(A.diagonal(), dtype=np.float64).copy()
        d[d <= 0] = 1.0
        inv_d = 1.0 / d
    else:
        inv_d = np.ones(n)

    r = b.copy()
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    it = 0
    while True:
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # confirm against the true residual; recurrences drift
            true_r = b - A @ x
            rnorm = np.linalg.norm(true_r)
            if rnorm <= target:
                return x
            r = true_r
            z = inv_d * r
            p = z.copy()
            rz = r @ z
        if it >= max_iter:
            raise ConvergenceError(
                f"CG did not converge in {max_iter} iterations "
                f"(relative residual {rnorm / bnorm:.3e})",
                residual=rnorm / bnorm, iterations=it)
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise ConvergenceError(
                "CG breakdown: matrix is not positive definite on the Krylov space",
                residual=rnorm / bnorm, iterations=it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1


@dataclass(frozen=True)
class EigenPairs:
    """Eigenvalues in ascending order with D-orthonormal eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return self.values.shape[0]


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive, for reproducibility
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _diag_entries(D, n) -> np.ndarray:
    if sp.issparse(D):
        d = np.asarray(D.diagonal(), dtype=np.float64)
    else:
        d = np.asarray(D, dtype=np.float64)
        if d.ndim == 2:
            d = np.diag(d)
    if d.shape != (n,):
        raise ValueError("D must be a diagonal of matching size")
    if np.any(d <= 0):
        raise ValueError("D must have strictly positive diagonal entries")
    return d


def dense_generalized_eigh(S, D):
    """Full spectrum of ``S x = lam D x`` by dense LAPACK; the test oracle."""
    S = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=np.float64)
    D = D.toarray() if sp.issparse(D) else np.asarray(D, dtype=np.float64)
    if D.ndim == 1:
        D = np.diag(D)
    return sla.eigh(S, D)


def smallest_eigenpairs(S, D, m: int, tol: float = EIGEN_TOL, seed: int = 0,
                        dense_limit: int = DENSE_EIGEN_LIMIT) -> EigenPairs:
    """The ``m`` smallest eigenpairs of ``S psi = lam D psi`` with diagonal ``D > 0``.

    The problem is symmetrised as ``D^-1/2 S D^-1/2 phi = lam phi``. Up to
    ``dense_limit`` unknowns LAPACK is used; beyond that, shift-invert Lanczos
    (ARPACK) with a start vector drawn from ``seed``. Every returned pair is
    checked against ``||S psi - lam D psi|| <= tol ||D psi||``.
    """
    n = S.shape[0]
    if S.shape != (n, n):
        raise ValueError("S must be square")
    if m < 1 or m > n:
        raise ValueError(f"requested {m} eigenpairs of a {n}x{n} problem")
    d = _diag_entries(D, n)
    s = 1.0 / np.sqrt(d)
    S = as_csr(S)
    Sn = sp.diags(s) @ S @ sp.diags(s)
    Sn = ((Sn + Sn.T) * 0.5).tocsr()

    if n <= dense_limit or m >= n - 1:
        vals, vecs = sla.eigh(Sn.toarray(), subset_by_index=[0, m - 1])
    else:
        v0 = np.random.default_rng(seed).standard_normal(n)
        # spectrum of the unit-diagonal operator sits in [0, 2]
        shift = -1e-2
        try:
            vals, vecs = spla.eigsh(Sn.tocsc(), k=m, sigma=shift, which="LM", v0=v0,
                                    tol=0.0, maxiter=max(1000, 20 * m))
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"Lanczos failed to converge: {exc}") from exc
        order = np.argsort(vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]

    psi = _fix_signs(vecs * s[:, None])
    resid = S @ psi - (d[:, None] * psi) * vals[None, :]
    scale = np.linalg.norm(d[:, None] * psi, axis=0)
    rel = np.linalg.norm(resid, axis=0) / scale
    if np.any(rel > tol):
        raise ConvergenceError(
            f"eigenpair residual {rel.max():.3e} exceeds tolerance {tol:.1e}",
            residual=float(rel.max()))
    return EigenPairs(values=vals, vectors=psi)


def half_bandwidth(A) -> int:
    A = sp.coo_matrix(A)
    if A.nnz == 0:
        return 0
    return int(np.abs(A.row.astype(np.int64) - A.col).max())


def banded_cholesky_solve(A, b, max_band: int | None = None) -> np.ndarray:
    """Direct SPD solve through LAPACK banded Cholesky (``pbtrf``/``pbtrs``).

    Raises ``numpy.linalg.LinAlgError`` when ``A`` is not numerically positive
    definite, or ``ValueError`` when its bandwidth exceeds ``max_band``.
    """
    A = as_csr(A)
    n = A.shape[0]
    bw = half_bandwidth(A)
    if max_band is not None and bw > max_band:
        raise ValueError(f"half bandwidth {bw} exceeds limit {max_band}")
    coo = A.tocoo()
    keep = coo.col >= coo.row
    r, c, v = coo.row[keep], coo.col[keep], coo.data[keep]
    # upper storage: ab[bw + i - j, j] = A[i, j] for i <= j
    ab = np.zeros((bw + 1, n))
    ab[bw + r - c, c] = v
    factor = sla.cholesky_banded(ab, lower=False, check_finite=False)
    return sla.cho_solve_banded((factor, False), np.asarray(b, dtype=np.float64),
                                check_finite=False)


def spd_solve(A, b, tol: float = CG_TOL, max_band: int | None = None) -> np.ndarray:
    """Banded Cholesky when it applies and meets ``tol``, otherwise :func:`cg_solve`.

    The direct route handles ill-conditioned but definite systems cheaply;
    CG covers semidefinite consistent systems where the factorisation breaks
    down.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    n = b.shape[0]
    if max_band is None:
        # beyond this the band storage is no cheaper than a dense factor
        max_band = n // 2
    try:
        x = banded_cholesky_solve(A, b, max_band=max_band)
        if np.all(np.isfinite(x)) and np.linalg.norm(b - A @ x) <= tol * bnorm:
            return x
    except (np.linalg.LinAlgError, ValueError):
        pass
    return cg_solve(A, b, tol=tol)


def triple_product(R, A) -> sp.csr_matrix:
    """Galerkin product ``R A R^T`` as an exactly symmetric CSR matrix."""
    if R.shape[1] != A.shape[0] or A.shape[0] != A.shape[1]:
        raise ValueError(f"cannot form R A R^T with R {R.shape} and A {A.shape}")
    Rs = as_csr(R)
    P = Rs @ as_csr(A) @ Rs.T
    P = ((P + P.T) * 0.5).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    return P
