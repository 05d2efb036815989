"""Direct solvers for the shifted stage systems ``(I - shift * L) x = r``.

``BlockSparseMatrix`` stores a (periodic) block-tridiagonal matrix.  It is
factored as a banded LU of the non-periodic part plus a Woodbury correction
for the two wrap-around blocks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lapack, lu_factor, lu_solve

from .errors import SingularMatrix, SolverFailure

PIVOT_RTOL = 1e-14
RESIDUAL_RTOL = 1e-12


@dataclass
class BlockSparseMatrix:
    """Block rows ``lower[k] x[k-1] + diag[k] x[k] + upper[k] x[k+1]``.

    With ``periodic`` the indices wrap, so ``lower[0]`` couples to the last
    block and ``upper[-1]`` to the first.  Without it those two blocks are
    ignored.
    """

    diag: np.ndarray   # (K, m, m)
    lower: np.ndarray  # (K, m, m)
    upper: np.ndarray  # (K, m, m)
    periodic: bool = True

    @property
    def nblocks(self) -> int:
        return self.diag.shape[0]

    @property
    def block_size(self) -> int:
        return self.diag.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        n = self.nblocks * self.block_size
        return n, n

    def matvec(self, x: np.ndarray) -> np.ndarray:
        K, m = self.nblocks, self.block_size
        xb = x.reshape(K, m)
        left = np.roll(xb, 1, axis=0)
        right = np.roll(xb, -1, axis=0)
        if not self.periodic:
            left[0] = 0.0
            right[-1] = 0.0
        y = (np.einsum("kij,kj->ki", self.diag, xb)
             + np.einsum("kij,kj->ki", self.lower, left)
             + np.einsum("kij,kj->ki", self.upper, right))
        return y.reshape(-1)

    def to_dense(self) -> np.ndarray:
        K, m = self.nblocks, self.block_size
        out = np.zeros(self.shape)
        for k in range(K):
            rows = slice(k * m, (k + 1) * m)
            out[rows, k * m:(k + 1) * m] += self.diag[k]
            if k > 0 or self.periodic:
                j = (k - 1) % K
                out[rows, j * m:(j + 1) * m] += self.lower[k]
            if k < K - 1 or self.periodic:
                j = (k + 1) % K
                out[rows, j * m:(j + 1) * m] += self.upper[k]
        return out


def identity_blocks(K: int, m: int, periodic: bool = True) -> BlockSparseMatrix:
    zero = np.zeros((K, m, m))
    return BlockSparseMatrix(np.broadcast_to(np.eye(m), (K, m, m)).copy(), zero, zero.copy(), periodic)


def shifted_identity(op: BlockSparseMatrix, shift: float) -> BlockSparseMatrix:
    """``I - shift * op`` in the same block layout."""
    m = op.block_size
    return BlockSparseMatrix(np.eye(m) - shift * op.diag, -shift * op.lower, -shift * op.upper, op.periodic)


def _band_storage(M: BlockSparseMatrix, wrap: bool) -> tuple[np.ndarray, int]:
    """LAPACK general-band layout (with room for fill-in) of the block matrix.

    Corner blocks are included only for ``K <= 2``, where they fall inside
    the band; larger periodic systems handle them by the Woodbury update.
    """
    K, m = M.nblocks, M.block_size
    n = K * m
    kl = ku = 2 * m - 1
    ab = np.zeros((2 * kl + ku + 1, n))
    a = np.arange(m)[:, None]
    b = np.arange(m)[None, :]
    blocks = np.arange(K)
    wrap_small = wrap and K <= 2
    parts = [(M.diag, blocks, blocks)]
    keep_l = (blocks > 0) | wrap_small
    keep_u = (blocks < K - 1) | wrap_small
    parts.append((M.lower[keep_l], blocks[keep_l], (blocks[keep_l] - 1) % K))
    parts.append((M.upper[keep_u], blocks[keep_u], (blocks[keep_u] + 1) % K))
    for vals, k, j in parts:
        rows = k[:, None, None] * m + a + 0 * b
        cols = j[:, None, None] * m + b + 0 * a
        np.add.at(ab, (kl + ku + rows - cols, cols), vals)
    return ab, kl


class BlockFactorization:
    """Immutable factorization of a :class:`BlockSparseMatrix`."""

    def __init__(self, M: BlockSparseMatrix):
        self.matrix = M
        K, m = M.nblocks, M.block_size
        self.n = K * m
        self._woodbury = M.periodic and K > 2
        ab, kl = _band_storage(M, wrap=M.periodic)
        self._kl = self._ku = kl
        lub, piv, info = lapack.dgbtrf(ab, kl, kl)
        if info < 0:
            raise ValueError(f"dgbtrf argument error {info}")
        pivots = np.abs(lub[kl + self._ku, :])
        if info > 0 or pivots.min() < PIVOT_RTOL * pivots.max():
            raise SingularMatrix(f"pivot ratio {pivots.min() / max(pivots.max(), 1e-300):.3e}")
        self._lub, self._piv = lub, piv
        if self._woodbury:
            # corners: rows of block 0 <- block K-1 and rows of block K-1 <- block 0
            P = np.zeros((self.n, 2 * m))
            P[:m, :m] = np.eye(m)
            P[-m:, m:] = np.eye(m)
            C = np.zeros((2 * m, 2 * m))
            C[:m, m:] = M.lower[0]
            C[m:, :m] = M.upper[-1]
            self._P, self._C = P, C
            Z = self._band_solve(P)
            S = np.eye(2 * m) + C @ (P.T @ Z)
            lu, spiv = lu_factor(S, check_finite=False)
            d = np.abs(np.diag(lu))
            if d.min() < PIVOT_RTOL * max(d.max(), 1.0):
                raise SingularMatrix("periodic correction is singular")
            self._Z, self._S = Z, (lu, spiv)

    def _band_solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self._lub, self._kl, self._ku, rhs, self._piv)
        if info != 0:
            raise SolverFailure(f"dgbtrs failed with info={info}")
        return x

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix.matvec(x)

    def solve(self, r: np.ndarray) -> np.ndarray:
        y = self._band_solve(r)
        if self._woodbury:
            corr = lu_solve(self._S, self._C @ (self._P.T @ y), check_finite=False)
            y = y - self._Z @ corr
        return y


def factor(M: BlockSparseMatrix) -> BlockFactorization:
    return BlockFactorization(M)


def factor_solve(M: BlockSparseMatrix, r: np.ndarray, fact: BlockFactorization | None = None,
                 rtol: float = RESIDUAL_RTOL) -> tuple[np.ndarray, float]:
    """Solve ``M x = r``; returns ``x`` and the relative residual.

    One step of iterative refinement is applied if the first residual
    misses ``rtol``; ``SolverFailure`` is raised if it is still missed.
    """
    return solve_checked(fact or factor(M), r, rtol)


def solve_checked(system, r: np.ndarray, rtol: float = RESIDUAL_RTOL) -> tuple[np.ndarray, float]:
    """Solve with any object exposing ``solve`` and ``matvec``; see :func:`factor_solve`."""
    x = system.solve(r)
    rnorm = max(np.linalg.norm(r), np.finfo(float).tiny)
    res = np.linalg.norm(system.matvec(x) - r) / rnorm
    if res > rtol:
        x = x + system.solve(r - system.matvec(x))
        res = np.linalg.norm(system.matvec(x) - r) / rnorm
        if res > rtol:
            raise SolverFailure(f"relative residual {res:.3e} exceeds {rtol:.1e}")
    return x, float(res)


class DenseSolver:
    """LU solver for small dense systems (ODE stage solves)."""

    def __init__(self, M: np.ndarray):
        self.matrix = np.asarray(M, dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)  # singularity is reported below
            lu, piv = lu_factor(self.matrix, check_finite=False)
        d = np.abs(np.diag(lu))
        if d.max() == 0.0 or d.min() < PIVOT_RTOL * d.max():
            raise SingularMatrix("dense matrix is singular to working precision")
        self._lu = (lu, piv)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def solve(self, r: np.ndarray) -> np.ndarray:
        return lu_solve(self._lu, r, check_finite=False)
