"""Two-component ODEs with a conserved convex entropy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ark_imex import LinearPart, SplitRhs
from .linsolve import DenseSolver
from .relax_core import EntropySpec


@dataclass(frozen=True)
class OdeProblem:
    name: str
    rhs: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    entropy: EntropySpec
    initial: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.initial)

    @property
    def reference_entropy(self) -> float:
        return self.entropy.eta(self.initial)


def exponential_entropy_problem() -> OdeProblem:
    """``q' = (-exp(q2), exp(q1))`` conserving ``exp(q1) + exp(q2)``."""

    def rhs(q):
        return np.array([-np.exp(q[1]), np.exp(q[0])])

    def jacobian(q):
        return np.array([[0.0, -np.exp(q[1])], [np.exp(q[0]), 0.0]])

    entropy = EntropySpec(
        eta=lambda q: float(np.sum(np.exp(q))),
        phi=np.exp,
        increment=lambda q, dq: float(np.sum(np.exp(q) * np.expm1(dq))),
    )
    return OdeProblem("exponential", rhs, jacobian, entropy, np.array([1.0, 0.5]))


def _pendulum_increment(q, dq):
    # cos(a) - cos(a + d) = 2 sin(a + d/2) sin(d/2)
    kinetic = q[0] * dq[0] + 0.5 * dq[0] ** 2
    return float(kinetic + 2.0 * np.sin(q[1] + 0.5 * dq[1]) * np.sin(0.5 * dq[1]))


def pendulum_problem() -> OdeProblem:
    """Nonlinear pendulum with energy ``q1**2 / 2 - cos(q2)``."""

    def rhs(q):
        return np.array([-np.sin(q[1]), q[0]])

    def jacobian(q):
        return np.array([[0.0, -np.cos(q[1])], [1.0, 0.0]])

    entropy = EntropySpec(
        eta=lambda q: float(0.5 * q[0] ** 2 - np.cos(q[1])),
        phi=lambda q: np.array([q[0], np.sin(q[1])]),
        increment=_pendulum_increment,
    )
    return OdeProblem("pendulum", rhs, jacobian, entropy, np.array([1.5, 0.0]))


PROBLEMS = {"exponential": exponential_entropy_problem, "pendulum": pendulum_problem}


def dense_linear_part(J: np.ndarray) -> LinearPart:
    J = np.asarray(J, dtype=float)
    eye = np.eye(len(J))
    return LinearPart(apply=lambda x: J @ x, shifted=lambda s: DenseSolver(eye - s * J))


def imex_splitting_for_ode(problem: OdeProblem, zero_linear: bool = False) -> SplitRhs:
    """Implicit part is the Jacobian frozen at the reference state.

    ``zero_linear`` replaces it by zero, which turns an IMEX step into the
    explicit half of the pair.
    """
    if zero_linear:
        zero = np.zeros((problem.dimension, problem.dimension))
        return SplitRhs(problem.rhs, lambda q_ref: dense_linear_part(zero))
    return SplitRhs(problem.rhs, lambda q_ref: dense_linear_part(problem.jacobian(q_ref)))
