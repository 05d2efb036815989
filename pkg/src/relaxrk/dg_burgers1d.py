"""Split-form DGSEM for the 1D inviscid Burgers equation on LGL nodes.

States are arrays of shape ``(K, N + 1)`` (element, node); flat vectors of
length ``K * (N + 1)`` are accepted wherever a state is expected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from .errors import InvalidInput, InvalidSpec
from .ark_imex import LinearPart, SplitRhs
from .linsolve import BlockSparseMatrix, factor, shifted_identity
from .relax_core import EntropySpec, quadratic_entropy

FLUX_ALIASES = {
    "ec": "ec", "entropy_conserving": "ec",
    "lf": "lf", "es": "lf", "lax_friedrichs": "lf", "entropy_stable": "lf",
}
LIMITER_GUARD = 1e-14


def flux_kind(name: str) -> str:
    try:
        return FLUX_ALIASES[name.lower()]
    except KeyError:
        raise InvalidInput(f"unknown flux {name!r}; use one of {sorted(FLUX_ALIASES)}") from None


def lgl_nodes_weights(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Legendre-Gauss-Lobatto nodes and weights on [-1, 1]."""
    if N < 1:
        raise InvalidInput("polynomial degree must be at least 1")
    PN = legendre.Legendre.basis(N)
    interior = np.sort(PN.deriv().roots().real)
    x = np.concatenate(([-1.0], interior, [1.0]))
    w = 2.0 / (N * (N + 1) * PN(x) ** 2)
    return x, w


def differentiation_matrix(x: np.ndarray) -> np.ndarray:
    """Nodal differentiation matrix from barycentric weights."""
    n = len(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / np.prod(diff, axis=1)
    D = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@dataclass
class Mesh1D:
    edges: np.ndarray
    periodic: bool = True
    levels: np.ndarray | None = None  # refinement level of each element (0 = coarsest)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        if self.edges.ndim != 1 or len(self.edges) < 2 or np.any(np.diff(self.edges) <= 0):
            raise InvalidSpec("element edges must be strictly increasing")
        if self.levels is None:
            self.levels = np.zeros(self.K, dtype=int)
        self.levels = np.asarray(self.levels, dtype=int)

    @property
    def K(self) -> int:
        return len(self.edges) - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def length(self) -> float:
        return float(self.edges[-1] - self.edges[0])

    def size_ratios(self) -> np.ndarray:
        """Ratio of each element's right neighbour size to its own size."""
        h = self.h
        if self.periodic:
            return np.roll(h, -1) / h
        return h[1:] / h[:-1]


def uniform_mesh(K: int, a: float = -1.0, b: float = 1.0, periodic: bool = True) -> Mesh1D:
    return Mesh1D(np.linspace(a, b, K + 1), periodic)


def build_nonuniform_mesh(spec: dict) -> Mesh1D:
    """Mesh from a left-to-right list of ``[level, count]`` regions.

    Elements of level ``l`` have size ``h0 / 2**l``; ``h0`` is chosen so the
    regions exactly fill ``spec["domain"]``.  ``spec`` may instead give
    ``per_side`` and ``center`` to build a mesh refined symmetrically about
    the middle of the domain.
    """
    a, b = spec.get("domain", (-1.0, 1.0))
    min_run = int(spec.get("buffer_size", 2)) + 1
    if "regions" in spec:
        regions = [tuple(r) for r in spec["regions"]]
    elif "per_side" in spec:
        side = [tuple(r) for r in spec["per_side"]]
        regions = side + [tuple(spec["center"])] + side[::-1]
    else:
        raise InvalidSpec("mesh spec needs 'regions' or 'per_side'/'center'")
    levels, counts = [], []
    for lev, cnt in regions:
        if int(lev) < 0 or int(cnt) < 1:
            raise InvalidSpec(f"bad region {lev, cnt}")
        levels.append(int(lev))
        counts.append(int(cnt))
    periodic = bool(spec.get("periodic", True))
    seq = levels + ([levels[0]] if periodic else [])
    if any(abs(p - q) > 1 for p, q in zip(seq, seq[1:])):
        raise InvalidSpec("adjacent regions must differ by at most one refinement level")
    if len(regions) > 1 and min(counts) < min_run:
        raise InvalidSpec(f"every region needs at least {min_run} elements to host buffers")
    elem_levels = np.repeat(levels, counts)
    rel = 2.0 ** (-elem_levels.astype(float))
    h0 = (b - a) / rel.sum()
    edges = a + np.concatenate(([0.0], np.cumsum(rel * h0)))
    edges[-1] = b
    return Mesh1D(edges, periodic, elem_levels)


@dataclass
class DgOperator:
    """Collocated DGSEM operators on a 1D mesh."""

    mesh: Mesh1D
    N: int
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    D: np.ndarray = field(init=False)

    def __post_init__(self):
        self.nodes, self.weights = lgl_nodes_weights(self.N)
        self.D = differentiation_matrix(self.nodes)
        h = self.mesh.h
        self.x = self.mesh.edges[:-1, None] + 0.5 * (self.nodes[None, :] + 1.0) * h[:, None]
        self.jac = 0.5 * h
        self.inv_jac = 1.0 / self.jac
        self.mass = self.weights[None, :] * self.jac[:, None]
        self.mass_flat = self.mass.reshape(-1)
        K = self.mesh.K
        idx = np.arange(K)
        if self.mesh.periodic:
            self.left_of, self.right_of = (idx - 1) % K, (idx + 1) % K
        else:
            # outflow-free walls: the neighbour trace is the element's own trace
            self.left_of, self.right_of = np.maximum(idx - 1, 0), np.minimum(idx + 1, K - 1)

    @property
    def K(self) -> int:
        return self.mesh.K

    @property
    def shape(self) -> tuple[int, int]:
        return self.K, self.N + 1

    @property
    def ndof(self) -> int:
        return self.K * (self.N + 1)

    def field(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(q, dtype=float).reshape(self.shape)

    def sbp_residual(self) -> float:
        Q = np.diag(self.weights) @ self.D
        B = np.zeros_like(Q)
        B[0, 0], B[-1, -1] = -1.0, 1.0
        return float(np.max(np.abs(Q + Q.T - B)))

    # inner products and functionals

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(self.mass_flat * np.ravel(u) * np.ravel(v)))

    def functionals(self, q: np.ndarray) -> tuple[float, float]:
        q = self.field(q)
        return float(np.sum(self.mass * q)), float(np.sum(self.mass * 0.5 * q * q))

    def element_means(self, q: np.ndarray) -> np.ndarray:
        q = self.field(q)
        return (q @ self.weights) / self.weights.sum()

    def project(self, fn) -> np.ndarray:
        return fn(self.x)

    # nonlinear residual

    def _surface_flux(self, a: np.ndarray, b: np.ndarray, flux: str) -> np.ndarray:
        if flux == "ec":
            return (a * a + a * b + b * b) / 6.0
        tau = np.maximum(np.abs(a), np.abs(b))
        return 0.25 * (a * a + b * b) - 0.5 * tau * (b - a)

    def rhs_local(self, qe: np.ndarray, left_trace: np.ndarray, right_trace: np.ndarray,
                  elements: np.ndarray | slice, flux: str) -> np.ndarray:
        """Residual on a subset of elements given the neighbouring traces.

        ``left_trace`` is the right-end value of each element's left
        neighbour and ``right_trace`` the left-end value of its right one.
        """
        flux = flux_kind(flux)
        w = self.weights
        ql, qr = qe[:, 0], qe[:, -1]
        vol = -(1.0 / 3.0) * ((qe * qe) @ self.D.T + qe * (qe @ self.D.T))
        vol[:, -1] -= (self._surface_flux(qr, right_trace, flux) - 0.5 * qr * qr) / w[-1]
        vol[:, 0] += (self._surface_flux(left_trace, ql, flux) - 0.5 * ql * ql) / w[0]
        return vol * self.inv_jac[elements, None]

    def rhs_full(self, q: np.ndarray, flux: str) -> np.ndarray:
        qe = self.field(q)
        out = self.rhs_local(qe, qe[self.left_of, -1], qe[self.right_of, 0], slice(None), flux)
        return out.reshape(np.shape(q))

    # linearized split

    def _linear_flux_coeffs(self, qtilde: np.ndarray, flux: str):
        """Interface coefficients of the linear flux on the right face of each element.

        Returns ``(ca, cb)`` with ``hat = ca * a + cb * b`` for left trace ``a``
        and right trace ``b``.
        """
        cl, cr = qtilde, qtilde[self.right_of]
        ca, cb = 0.5 * cl, 0.5 * cr
        if flux_kind(flux) == "lf":
            tau = np.maximum(np.abs(cl), np.abs(cr))
            ca, cb = ca + 0.5 * tau, cb - 0.5 * tau
        return ca, cb

    def linear_apply(self, q: np.ndarray, qtilde: np.ndarray, flux: str) -> np.ndarray:
        """Action of the linearized operator ``L`` frozen at elementwise constants ``qtilde``."""
        qe = self.field(q)
        c = np.asarray(qtilde, dtype=float)
        w = self.weights
        ca, cb = self._linear_flux_coeffs(c, flux)
        ql, qr = qe[:, 0], qe[:, -1]
        hat_r = ca * qr + cb * qe[self.right_of, 0]
        hat_l = hat_r[self.left_of]
        out = -c[:, None] * (qe @ self.D.T)
        out[:, -1] -= (hat_r - c * qr) / w[-1]
        out[:, 0] += (hat_l - c * ql) / w[0]
        out *= self.inv_jac[:, None]
        return out.reshape(np.shape(q))

    def linear_blocks(self, qtilde: np.ndarray, flux: str) -> BlockSparseMatrix:
        """Assemble ``L`` (frozen at ``qtilde``) as a block-tridiagonal matrix."""
        if not self.mesh.periodic:
            raise InvalidInput("block assembly is implemented for periodic meshes")
        K, m = self.shape
        c = np.asarray(qtilde, dtype=float)
        w = self.weights
        ca, cb = self._linear_flux_coeffs(c, flux)
        diag = -c[:, None, None] * self.D[None, :, :]
        lower = np.zeros((K, m, m))
        upper = np.zeros((K, m, m))
        # right face: -(ca*qr + cb*q_next0 - c*qr)/w_N
        diag[:, -1, -1] -= (ca - c) / w[-1]
        upper[:, -1, 0] -= cb / w[-1]
        # left face uses the right-face coefficients of the left neighbour
        cal, cbl = ca[self.left_of], cb[self.left_of]
        diag[:, 0, 0] += (cbl - c) / w[0]
        lower[:, 0, -1] += cal / w[0]
        scale = self.inv_jac[:, None, None]
        return BlockSparseMatrix(diag * scale, lower * scale, upper * scale, True)

    def rhs_split(self, q: np.ndarray, qtilde: np.ndarray, flux: str) -> tuple[np.ndarray, np.ndarray]:
        Lq = self.linear_apply(q, qtilde, flux)
        return Lq, self.rhs_full(q, flux) - Lq

    # limiter

    def apply_limiter(self, q: np.ndarray) -> np.ndarray:
        qe = self.field(q)
        mean = self.element_means(qe)
        fwd = mean[self.right_of] - mean
        bwd = mean - mean[self.left_of]
        ql, qr = qe[:, 0], qe[:, -1]
        lim_l = mean - minmod(mean - ql, fwd, bwd)
        lim_r = mean + minmod(qr - mean, fwd, bwd)
        denom = ql + qr - 2.0 * mean
        numer = lim_l + lim_r - 2.0 * mean
        active = np.abs(denom) >= LIMITER_GUARD * np.abs(mean) + 1e-300
        scale = np.ones_like(mean)
        scale[active] = numer[active] / denom[active]
        limited = mean[:, None] + (qe - mean[:, None]) * scale[:, None]
        out = np.where(active[:, None], limited, qe)
        return out.reshape(np.shape(q))

    # time-integration adapters

    def energy_entropy(self) -> EntropySpec:
        """Quadratic entropy ``q**2 / 2`` in the mass-weighted inner product."""
        return quadratic_entropy(self.inner)

    def rhs(self, flux: str):
        flux = flux_kind(flux)
        return lambda q: self.rhs_full(q, flux)

    def imex_split(self, flux: str) -> SplitRhs:
        """Linear part frozen at the elementwise means of the reference state."""
        flux = flux_kind(flux)

        def linearize(q_ref: np.ndarray) -> LinearPart:
            qt = self.element_means(q_ref)
            blocks = self.linear_blocks(qt, flux)
            return LinearPart(
                apply=lambda x: self.linear_apply(x, qt, flux),
                shifted=lambda shift: factor(shifted_identity(blocks, shift)),
            )

        return SplitRhs(self.rhs(flux), linearize)


def minmod(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    s = np.sign(a)
    same = (s == np.sign(b)) & (s == np.sign(c))
    return np.where(same, s * np.minimum(np.minimum(np.abs(a), np.abs(b)), np.abs(c)), 0.0)


def gaussian(x: np.ndarray) -> np.ndarray:
    return np.exp(-10.0 * x * x)
