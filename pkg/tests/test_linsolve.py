import numpy as np
import pytest
import scipy.linalg

from relaxrk.dg_burgers1d import DgOperator, uniform_mesh
from relaxrk.errors import SingularMatrix
from relaxrk.linsolve import (
    BlockSparseMatrix,
    DenseSolver,
    factor,
    factor_solve,
    identity_blocks,
    shifted_identity,
)


def random_blocks(rng, K, m, periodic=True, dominance=4.0):
    diag = rng.standard_normal((K, m, m)) + dominance * np.eye(m)
    return BlockSparseMatrix(diag, rng.standard_normal((K, m, m)) * 0.5,
                             rng.standard_normal((K, m, m)) * 0.5, periodic)


def test_identity_solve_returns_rhs(rng):
    r = rng.standard_normal(12)
    x, res = factor_solve(identity_blocks(3, 4), r)
    assert np.allclose(x, r, atol=1e-15)
    assert res == 0.0


@pytest.mark.parametrize("K,periodic", [(3, True), (4, True), (7, True), (6, False), (1, True), (2, True)])
def test_random_block_system_against_dense_lu(rng, K, periodic):
    M = random_blocks(rng, K, 4, periodic)
    dense = M.to_dense()
    r = rng.standard_normal(dense.shape[0])
    x, res = factor_solve(M, r)
    oracle = scipy.linalg.lu_solve(scipy.linalg.lu_factor(dense), r)
    assert res <= 1e-12
    assert np.allclose(x, oracle, rtol=1e-10, atol=1e-12)
    assert np.allclose(M.matvec(x), dense @ x, atol=1e-12)


def test_duplicate_row_is_singular():
    M = identity_blocks(3, 2)
    M.diag[1] = [[1.0, 2.0], [1.0, 2.0]]
    with pytest.raises(SingularMatrix):
        factor(M)
    with pytest.raises(SingularMatrix):
        DenseSolver(np.array([[1.0, 2.0], [1.0, 2.0]]))


def test_zero_shift_gives_identity():
    op = DgOperator(uniform_mesh(5), 2)
    blocks = op.linear_blocks(np.linspace(-1, 1, 5), "ec")
    assert np.array_equal(shifted_identity(blocks, 0.0).to_dense(), np.eye(15))


def test_single_element_with_zero_state_is_identity():
    op = DgOperator(uniform_mesh(1), 3)
    M = shifted_identity(op.linear_blocks(np.zeros(1), "ec"), 0.3)
    assert np.array_equal(M.to_dense(), np.eye(4))


@pytest.mark.parametrize("flux", ["ec", "es"])
def test_assembled_blocks_match_matrix_free_action(rng, flux):
    # oracle: dense matrix from applying the operator to every unit vector
    op = DgOperator(uniform_mesh(3), 1)
    qt = np.ones(3)
    dense = np.column_stack([op.linear_apply(e, qt, flux) for e in np.eye(op.ndof)])
    assert np.allclose(op.linear_blocks(qt, flux).to_dense(), dense, atol=1e-13)
    op = DgOperator(uniform_mesh(6), 3)
    qt = rng.uniform(-1, 1, 6)
    blocks = op.linear_blocks(qt, flux)
    shift = 0.01
    M = shifted_identity(blocks, shift)
    for _ in range(5):
        v = rng.standard_normal(op.ndof)
        assert np.allclose(M.matvec(v), v - shift * op.linear_apply(v, qt, flux), atol=1e-12)


def test_constant_state_action():
    op = DgOperator(uniform_mesh(8), 3)
    qt = np.full(8, 0.7)
    const = np.full(op.ndof, 2.0)
    assert np.allclose(op.linear_blocks(qt, "ec").matvec(const), op.linear_apply(const, qt, "ec"), atol=1e-13)
