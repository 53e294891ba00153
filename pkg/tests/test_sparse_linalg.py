import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from msdenoise.fvm import assemble_stiffness
from msdenoise.sparse_linalg import (ConvergenceError, banded_cholesky_solve, cg_solve,
                                     dense_generalized_eigh, smallest_eigenpairs, spd_solve,
                                     triple_product)


def random_spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


def test_cg_identity(rng):
    b = rng.standard_normal(7)
    np.testing.assert_allclose(cg_solve(sp.identity(7, format="csr"), b), b, atol=1e-14)


def test_cg_2x2():
    x = cg_solve(sp.csr_matrix([[2.0, -1.0], [-1.0, 2.0]]), np.array([1.0, 0.0]), tol=1e-14)
    np.testing.assert_allclose(x, [2 / 3, 1 / 3], atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cg_matches_dense(seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, 8)
    b = rng.standard_normal(8)
    x = cg_solve(sp.csr_matrix(A), b, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_cg_zero_rhs_and_errors(rng):
    A = sp.csr_matrix(random_spd(rng, 4))
    assert np.all(cg_solve(A, np.zeros(4)) == 0)
    with pytest.raises(ValueError):
        cg_solve(A, np.ones(3))
    with pytest.raises(ValueError):
        cg_solve(A, np.ones(4), tol=0)


def test_cg_reports_nonconvergence(rng):
    A = sp.csr_matrix(np.diag(np.logspace(0, 8, 50)) + 0.01)
    with pytest.raises(ConvergenceError) as info:
        cg_solve(A, rng.standard_normal(50), tol=1e-14, max_iter=3)
    assert info.value.iterations == 3 and info.value.residual > 0


def test_cg_indefinite_breakdown():
    with pytest.raises(ConvergenceError):
        cg_solve(sp.csr_matrix(np.diag([1.0, -1.0])), np.array([1.0, 1.0]), precondition=False)


def test_direct_solvers(rng):
    A = random_spd(rng, 30)
    A[np.abs(np.subtract.outer(np.arange(30), np.arange(30))) > 3] = 0
    b = rng.standard_normal(30)
    ref = np.linalg.solve(A, b)
    np.testing.assert_allclose(banded_cholesky_solve(sp.csr_matrix(A), b), ref, atol=1e-12)
    np.testing.assert_allclose(spd_solve(sp.csr_matrix(A), b), ref, atol=1e-10)
    with pytest.raises(ValueError):
        banded_cholesky_solve(sp.csr_matrix(A), b, max_band=2)


def test_spd_solve_semidefinite_consistent():
    # singular Laplacian with a consistent right-hand side: CG fallback
    L = assemble_stiffness(np.zeros((4, 4)), 0.3)
    b = L @ np.arange(16.0)
    x = spd_solve(L, b)
    assert np.linalg.norm(L @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_eigen_two_cell():
    w = 0.7
    S = sp.csr_matrix([[w, -w], [-w, w]])
    pairs = smallest_eigenpairs(S, np.array([w, w]), 2)
    np.testing.assert_allclose(pairs.values, [0, 2], atol=1e-12)
    v = pairs.vectors
    assert abs(v[0, 0] - v[1, 0]) < 1e-12 and abs(v[0, 1] + v[1, 1]) < 1e-12
    np.testing.assert_allclose(v.T @ np.diag([w, w]) @ v, np.eye(2), atol=1e-12)


def test_eigen_errors():
    S = sp.csr_matrix([[1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(ValueError):
        smallest_eigenpairs(S, np.array([1.0, 0.0]), 1)
    with pytest.raises(ValueError):
        smallest_eigenpairs(S, np.array([1.0, 1.0]), 3)


@pytest.mark.parametrize("dense_limit", [1024, 0])
def test_eigen_matches_dense_oracle(rng, dense_limit):
    u = rng.random((16, 16))
    S = assemble_stiffness(u, 0.3)
    d = S.diagonal()
    pairs = smallest_eigenpairs(S, d, 8, dense_limit=dense_limit, seed=3)
    ref, _ = dense_generalized_eigh(S, d)
    np.testing.assert_allclose(pairs.values[1:], ref[1:8], rtol=1e-6)
    assert abs(pairs.values[0]) <= 1e-10
    psi = pairs.vectors
    np.testing.assert_allclose(psi.T @ (d[:, None] * psi), np.eye(8), atol=1e-8)
    assert np.all(pairs.values >= -1e-10)
    assert np.all(np.diff(pairs.values) >= 0)
    # signs: largest entry of each vector is positive
    idx = np.argmax(np.abs(psi), axis=0)
    assert np.all(psi[idx, np.arange(8)] > 0)


def test_eigen_iterative_deterministic(rng):
    u = rng.random((40, 40))
    S = assemble_stiffness(u, 0.3)
    a = smallest_eigenpairs(S, S.diagonal(), 6, dense_limit=0, seed=11)
    b = smallest_eigenpairs(S, S.diagonal(), 6, dense_limit=0, seed=11)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.vectors, b.vectors)


def test_triple_product(rng):
    A = sp.csr_matrix(random_spd(rng, 16))
    np.testing.assert_allclose(triple_product(sp.identity(16), A).toarray(), A.toarray(), atol=1e-14)
    L = assemble_stiffness(rng.random((4, 4)), 0.3)
    assert abs(triple_product(sp.csr_matrix(np.ones((1, 16))), L).toarray()[0, 0]) <= 1e-14
    R = rng.standard_normal((4, 16))
    P = triple_product(sp.csr_matrix(R), A).toarray()
    np.testing.assert_allclose(P, R @ A.toarray() @ R.T, atol=1e-12 * np.abs(P).max())
    assert np.array_equal(P, P.T)
    with pytest.raises(ValueError):
        triple_product(sp.csr_matrix(R), sp.identity(5))
