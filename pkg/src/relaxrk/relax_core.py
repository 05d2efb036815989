"""Relaxation parameter computation and relaxed / IDT step completion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateStep, NoBracket

DEGENERACY_RATIO = 1e-28
THETA_RTOL = 1e-12
BRACKET_WIDTH = 10.0
BRACKET_DOUBLINGS = 8
# extra probes inside the first bracket, so the sign change nearest 1 is found
BRACKET_SUBDIVISIONS = 10
# theta(0) == 0 identically, so the bracket must stay clear of the trivial root
GAMMA_FLOOR = 1e-3

MODES = ("standard", "relaxation", "idt")


def dot(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.vdot(u, v).real)


@dataclass(frozen=True)
class EntropySpec:
    """Entropy functional ``eta``, its gradient ``phi`` and the pairing ``inner``.

    ``increment(q, dq)`` may be supplied to evaluate ``eta(q + dq) - eta(q)``
    without cancellation, and ``remainder(q, dq)`` for the same minus its
    linear part ``inner(phi(q), dq)``; the relaxation residual is built from
    the latter.
    """

    eta: Callable[[np.ndarray], float]
    phi: Callable[[np.ndarray], np.ndarray]
    inner: Callable[[np.ndarray, np.ndarray], float] = dot
    is_quadratic: bool = False
    increment: Callable[[np.ndarray, np.ndarray], float] | None = None
    remainder: Callable[[np.ndarray, np.ndarray], float] | None = None

    def delta(self, q: np.ndarray, dq: np.ndarray) -> float:
        if self.increment is not None:
            return float(self.increment(q, dq))
        return float(self.eta(q + dq) - self.eta(q))

    def nonlinear_delta(self, q: np.ndarray, dq: np.ndarray) -> float:
        """``eta(q + dq) - eta(q) - inner(phi(q), dq)``."""
        if self.remainder is not None:
            return float(self.remainder(q, dq))
        return self.delta(q, dq) - self.inner(self.phi(q), dq)


def quadratic_entropy(inner: Callable[[np.ndarray, np.ndarray], float] = dot) -> EntropySpec:
    """``eta(q) = inner(q, q) / 2`` with ``phi(q) = q``."""
    return EntropySpec(
        eta=lambda q: 0.5 * inner(q, q),
        phi=lambda q: q,
        inner=inner,
        is_quadratic=True,
        increment=lambda q, dq: inner(dq, q) + 0.5 * inner(dq, dq),
        remainder=lambda q, dq: 0.5 * inner(dq, dq),
    )


@dataclass
class StageTerm:
    """One weighted stage contribution ``weight * rhs`` evaluated at ``state``.

    ``weight`` already includes the step size and may be a scalar or a
    per-entry array (multirate zones use different weights).
    """

    weight: float | np.ndarray
    rhs: np.ndarray
    state: np.ndarray

    def contribution(self) -> np.ndarray:
        return self.weight * self.rhs


@dataclass
class LedgerMoments:
    """Running sums kept instead of individual terms for very long stage lists.

    Only valid for the entropy they were accumulated with.
    """

    update: np.ndarray      # sum of weight * rhs
    production: float       # sum inner(weight * rhs, phi(state))
    relative: float         # sum inner(weight * rhs, state - step_start)


@dataclass
class StageLedger:
    step_start: np.ndarray
    step_end_candidate: np.ndarray
    dt: float
    t_start: float = 0.0
    terms: list[StageTerm] = field(default_factory=list)
    moments: LedgerMoments | None = None

    def update(self) -> np.ndarray:
        return self.step_end_candidate - self.step_start

    def summed_update(self) -> np.ndarray:
        if self.moments is not None:
            return self.moments.update
        total = np.zeros_like(self.step_start)
        for term in self.terms:
            total += term.contribution()
        return total

    def reconstruction_error(self) -> float:
        """Relative mismatch between the stored and re-summed step update."""
        recomputed = self.step_start + self.summed_update()
        scale = max(np.max(np.abs(self.step_end_candidate)), np.finfo(float).tiny)
        return float(np.max(np.abs(recomputed - self.step_end_candidate)) / scale)

    def production(self, entropy: EntropySpec) -> float:
        """Weighted stage entropy production ``sum w (R_i, phi(Q_i))``."""
        if self.moments is not None:
            return self.moments.production
        return sum(entropy.inner(term.contribution(), entropy.phi(term.state)) for term in self.terms)

    def relative_production(self, entropy: EntropySpec) -> float:
        """``sum w (R_i, phi(Q_i) - phi(q_n))``, free of the cancellation in ``production``."""
        if self.moments is not None:
            return self.moments.relative
        phi0 = entropy.phi(self.step_start)
        return sum(entropy.inner(term.contribution(), entropy.phi(term.state) - phi0) for term in self.terms)


@dataclass(frozen=True)
class RelaxationOutcome:
    gamma: float
    mode: str
    residual: float
    iterations: int = 0
    flags: tuple[str, ...] = ()
    gamma_root: float | None = None  # root-solver value when cross-checked


def _check_nondegenerate(ledger: StageLedger, inner) -> tuple[np.ndarray, float]:
    d = ledger.update()
    dd = inner(d, d)
    qq = inner(ledger.step_start, ledger.step_start)
    if dd <= DEGENERACY_RATIO * qq or dd == 0.0:
        raise DegenerateStep(f"step update norm^2 {dd:.3e} vs state norm^2 {qq:.3e}")
    return d, dd


def gamma_quadratic(ledger: StageLedger, inner: Callable = dot) -> float:
    """Closed-form relaxation parameter for ``eta = inner(q, q) / 2``."""
    _, dd = _check_nondegenerate(ledger, inner)
    q0 = ledger.step_start
    if ledger.moments is not None:
        num = ledger.moments.relative
    else:
        num = sum(inner(term.contribution(), term.state - q0) for term in ledger.terms)
    return 2.0 * num / dd


def theta_function(ledger: StageLedger, entropy: EntropySpec) -> Callable[[float], float]:
    # eta(q0 + g d) - eta(q0) - g P with the linear part inner(phi(q0), d)
    # removed from both sides; the two forms agree when d is the summed update
    d = ledger.update()
    q0 = ledger.step_start
    production = ledger.relative_production(entropy)
    return lambda g: entropy.nonlinear_delta(q0, g * d) - g * production


def theta_tolerance(ledger: StageLedger, entropy: EntropySpec) -> float:
    return THETA_RTOL * max(1.0, abs(entropy.eta(ledger.step_start)))


def gamma_general(ledger: StageLedger, entropy: EntropySpec, mode: str = "relaxation") -> RelaxationOutcome:
    """Root of the relaxation residual via Brent's method on an expanding bracket.

    Each side of 1 is probed outward at geometrically spaced offsets, from
    ``w / 2**10`` up to ``w * 2**8`` with ``w = 10 dt``, and the first sign
    change on each side is kept.  For non-convex entropies this returns the
    root nearest 1 rather than whichever root a wide bracket encloses.
    """
    _check_nondegenerate(ledger, entropy.inner)
    theta = theta_function(ledger, entropy)
    at_one = theta(1.0)
    if at_one == 0.0:
        return RelaxationOutcome(1.0, mode, 0.0, 0)
    half = BRACKET_WIDTH * abs(ledger.dt)
    offsets = half * 2.0 ** np.arange(-BRACKET_SUBDIVISIONS, BRACKET_DOUBLINGS + 1)
    brackets = []
    for side in (-1.0, 1.0):
        inner = 1.0
        for off in offsets:
            outer = max(1.0 + side * off, GAMMA_FLOOR)
            if theta(outer) * at_one < 0.0:
                brackets.append((min(inner, outer), max(inner, outer)))
                break
            if outer == GAMMA_FLOOR:
                break
            inner = outer
    if not brackets:
        lo, hi = max(1.0 - offsets[-1], GAMMA_FLOOR), 1.0 + offsets[-1]
        raise NoBracket(f"no sign change of theta on [{lo:.3g}, {hi:.3g}]")
    best = None
    for a, b in brackets:
        gamma, info = brentq(theta, a, b, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200, full_output=True)
        if best is None or abs(gamma - 1.0) < abs(best[0] - 1.0):
            best = (float(gamma), info.iterations)
    gamma, iterations = best
    return RelaxationOutcome(gamma, mode, abs(theta(gamma)), iterations)


def relax(ledger: StageLedger, entropy: EntropySpec, mode: str, cross_check: bool = False) -> RelaxationOutcome:
    """Pick the relaxation parameter for ``mode`` with fallbacks to ``gamma = 1``.

    Quadratic entropies use the closed form; others use the root solver.
    With ``cross_check`` the root solver also runs for quadratic entropies
    and its value is kept in ``gamma_root``.
    """
    if mode == "standard":
        return RelaxationOutcome(1.0, "standard", 0.0)
    try:
        if entropy.is_quadratic:
            gamma = gamma_quadratic(ledger, entropy.inner)
            residual = abs(theta_function(ledger, entropy)(gamma))
            root = gamma_general(ledger, entropy, mode).gamma if cross_check else None
            return RelaxationOutcome(gamma, mode, residual, 0, (), root)
        return gamma_general(ledger, entropy, mode)
    except DegenerateStep:
        return RelaxationOutcome(1.0, "none", 0.0, 0, ("degenerate",))
    except NoBracket:
        return RelaxationOutcome(1.0, "none", float("nan"), 0, ("no_bracket",))


def apply_completion(ledger: StageLedger, gamma: float, mode: str) -> tuple[np.ndarray, float]:
    """Relaxed state ``gamma q_{n+1} + (1 - gamma) q_n`` and its time."""
    q0 = ledger.step_start
    if gamma == 1.0:
        state = ledger.step_end_candidate.copy()
    else:
        state = q0 + gamma * (ledger.step_end_candidate - q0)
    if mode == "relaxation":
        return state, ledger.t_start + gamma * ledger.dt
    return state, ledger.t_start + ledger.dt
