import pickle

import numpy as np
import pytest

from errors import AsymmetricMatrix, NonConvergence, ZeroDiagonal
from solver import SparseMatrix, SparseSystem, asymmetry, cg_solve, reduce_system, relative_residual


def random_spd(rng, n, density=1.0):
    m = rng.normal(size=(n, n))
    if density < 1.0:
        m *= rng.random((n, n)) < density
    return m @ m.T + n * np.eye(n)


def as_sparse(dense):
    rows, cols = np.nonzero(dense)
    return SparseMatrix.assemble(dense.shape[0], rows, cols, dense[rows, cols])


def test_cg_matches_dense_elimination(rng):
    for _ in range(100):
        n = int(rng.integers(2, 201))
        a = random_spd(rng, n, density=float(rng.uniform(0.05, 1.0)))
        b = rng.normal(size=n)
        solution, reports = cg_solve(SparseSystem(as_sparse(a), b), tol=1e-12)
        expected = np.linalg.solve(a, b)
        assert np.linalg.norm(solution[:, 0] - expected) <= 1e-8 * np.linalg.norm(expected)
        assert reports[0].converged
        assert reports[0].residual <= 1e-12


def test_multiple_channels_solved_independently(rng):
    a = random_spd(rng, 30)
    b = rng.normal(size=(30, 3))
    solution, reports = cg_solve(SparseSystem(as_sparse(a), b), tol=1e-12)
    np.testing.assert_allclose(solution, np.linalg.solve(a, b), rtol=1e-8, atol=1e-10)
    assert len(reports) == 3


def test_identity_is_solved_in_one_step(rng):
    b = rng.normal(size=12)
    solution, reports = cg_solve(SparseSystem(as_sparse(np.eye(12)), b))
    np.testing.assert_array_equal(solution[:, 0], b)
    assert reports[0].iterations <= 1
    assert reports[0].converged


def test_diagonal_system():
    solution, reports = cg_solve(SparseSystem(as_sparse(np.diag([1.0, 2.0, 4.0])), np.array([1.0, 2.0, 4.0])))
    np.testing.assert_allclose(solution[:, 0], [1.0, 1.0, 1.0], rtol=1e-12)
    assert reports[0].converged


def test_zero_rhs_returns_zero_without_iterating(rng):
    a = random_spd(rng, 10)
    solution, reports = cg_solve(SparseSystem(as_sparse(a), np.zeros(10)))
    assert not solution.any()
    assert reports[0].iterations == 0


def test_solve_is_deterministic(rng):
    a = random_spd(rng, 80, density=0.2)
    system = SparseSystem(as_sparse(a), rng.normal(size=80))
    first, _ = cg_solve(system, tol=1e-10)
    second, _ = cg_solve(system, tol=1e-10)
    assert first.tobytes() == second.tobytes()


def test_zero_diagonal_rejected():
    matrix = as_sparse(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ZeroDiagonal):
        cg_solve(SparseSystem(matrix, np.ones(2)))


def test_non_convergence_reports_residual(rng):
    a = random_spd(rng, 50)
    with pytest.raises(NonConvergence) as info:
        cg_solve(SparseSystem(as_sparse(a), rng.normal(size=50)), tol=1e-14, max_iter=1)
    assert info.value.iterations == 1
    assert info.value.residual > 1e-14
    copy = pickle.loads(pickle.dumps(info.value))
    assert copy.residual == info.value.residual


def test_finalize_symmetrizes_exactly(rng):
    dense = rng.normal(size=(12, 12))
    matrix = as_sparse(dense)
    assert asymmetry(matrix.csr) == 0.0
    np.testing.assert_allclose(matrix.to_dense(), (dense + dense.T) * 0.5)
    assert np.all(np.diff(matrix.indices[matrix.indptr[0]:matrix.indptr[1]]) > 0)


def test_finalize_rejects_asymmetric_input():
    rows, cols = np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])
    with pytest.raises(AsymmetricMatrix):
        SparseMatrix.assemble(2, rows, cols, np.array([2.0, 1.0, 0.5, 2.0]), symmetrize=False)


def test_duplicate_triplets_are_summed():
    matrix = SparseMatrix.assemble(2, np.array([0, 0, 1]), np.array([0, 0, 1]), np.array([1.0, 2.0, 5.0]))
    np.testing.assert_array_equal(matrix.to_dense(), [[3.0, 0.0], [0.0, 5.0]])


def test_stored_zeros_are_dropped():
    matrix = SparseMatrix.assemble(2, np.array([0, 0, 1]), np.array([0, 1, 1]), np.array([1.0, 0.0, 1.0]))
    assert len(matrix.values) == 2


def test_reduce_system_matches_constrained_dense_solve(rng):
    n = 40
    a = random_spd(rng, n, density=0.3)
    unknown = rng.random(n) < 0.6
    known = np.where(unknown, 0.0, rng.random(n))
    system = reduce_system(as_sparse(a), unknown, known)
    solution, _ = cg_solve(system, tol=1e-12)

    u, k = np.nonzero(unknown)[0], np.nonzero(~unknown)[0]
    expected = np.linalg.solve(a[np.ix_(u, u)], -a[np.ix_(u, k)] @ known[k])
    np.testing.assert_allclose(solution[:, 0], expected, rtol=1e-8, atol=1e-10)


def test_relative_residual(rng):
    a = random_spd(rng, 5)
    matrix = as_sparse(a)
    x = rng.normal(size=5)
    assert relative_residual(matrix, x, a @ x) == pytest.approx(0.0, abs=1e-12)
