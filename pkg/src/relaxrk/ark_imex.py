"""Explicit and IMEX additive Runge-Kutta steps, plus the relaxed time loop.

Every step returns a :class:`StepRecord` whose ledger keeps the individual
stage terms, so the relaxation parameter can be computed afterwards from
the stage states and right-hand sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInput, NonFinite
from .linsolve import solve_checked
from .relax_core import (
    MODES,
    EntropySpec,
    RelaxationOutcome,
    StageLedger,
    StageTerm,
    apply_completion,
    relax,
    theta_tolerance,
)
from .tableaux import ButcherTableau, ImexPair

Rhs = Callable[[np.ndarray], np.ndarray]
TIME_RTOL = 1e-12
MAX_FIT_ITERATIONS = 20


@dataclass(frozen=True)
class LinearPart:
    """A frozen linear operator ``L`` and a factory for ``I - shift * L``.

    ``shifted(shift)`` must return an object with ``solve(r)`` and
    ``matvec(x)``.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    shifted: Callable[[float], object]


@dataclass(frozen=True)
class SplitRhs:
    """``R(q) = L q + N(q)`` with ``L`` linearized about a reference state."""

    full: Rhs
    implicit_linear: Callable[[np.ndarray], LinearPart]

    def explicit_remainder(self, q: np.ndarray, linear: LinearPart) -> np.ndarray:
        return self.full(q) - linear.apply(q)

    def consistency(self, q: np.ndarray, linear: LinearPart) -> float:
        """Relative size of ``R(q) - (L q + N(q))``."""
        r = self.full(q)
        gap = r - (linear.apply(q) + self.explicit_remainder(q, linear))
        return float(np.linalg.norm(gap) / max(np.linalg.norm(r), np.finfo(float).tiny))


@dataclass
class StepRecord:
    ledger: StageLedger
    solve_stats: list[dict] = field(default_factory=list)


def _check_finite(x: np.ndarray, what: str, t: float) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"non-finite {what} near t={t:.6g}")
    return x


def _finish(q: np.ndarray, t: float, dt: float, terms: list[StageTerm]) -> StepRecord:
    q_next = q.copy()
    for term in terms:
        q_next += term.contribution()
    _check_finite(q_next, "step result", t)
    return StepRecord(StageLedger(q, q_next, dt, t, terms))


def erk_step(rhs: Rhs, tableau: ButcherTableau, q: np.ndarray, t: float, dt: float) -> StepRecord:
    if not tableau.is_explicit:
        raise InvalidInput(f"tableau {tableau.name!r} is not explicit")
    A, b = tableau.A, tableau.b
    states, rates = [], []
    for i in range(tableau.s):
        Q = q.copy()
        for j in range(i):
            if A[i, j] != 0.0:
                Q += (dt * A[i, j]) * rates[j]
        _check_finite(Q, f"stage {i + 1} state", t)
        states.append(Q)
        rates.append(_check_finite(rhs(Q), f"stage {i + 1} rhs", t))
    terms = [StageTerm(dt * b[i], rates[i], states[i]) for i in range(tableau.s)]
    return _finish(q, t, dt, terms)


def ark_step(split: SplitRhs, pair: ImexPair, q: np.ndarray, t: float, dt: float,
             linear: LinearPart | None = None) -> StepRecord:
    """One IMEX step; ``L`` is frozen at ``q`` unless ``linear`` is given.

    Stage systems ``(I - a_ii dt L) Q_i = rhs_i`` share one factorization
    per distinct diagonal coefficient.
    """
    ex, im = pair.explicit_part, pair.implicit_part
    if not im.is_diagonally_implicit:
        raise InvalidInput(f"implicit part of {pair.name!r} is not diagonally implicit")
    linear = linear or split.implicit_linear(q)
    systems: dict[float, object] = {}
    states, explicit_rates, implicit_rates, stats = [], [], [], []
    for i in range(pair.s):
        r = q.copy()
        for j in range(i):
            if ex.A[i, j] != 0.0:
                r += (dt * ex.A[i, j]) * explicit_rates[j]
            if im.A[i, j] != 0.0:
                r += (dt * im.A[i, j]) * implicit_rates[j]
        diag = float(im.A[i, i])
        if diag != 0.0:
            if diag not in systems:
                systems[diag] = linear.shifted(diag * dt)
            Q, residual = solve_checked(systems[diag], r)
            stats.append({"stage": i + 1, "shift": diag * dt, "residual": residual})
        else:
            Q = r
        _check_finite(Q, f"stage {i + 1} state", t)
        g = linear.apply(Q)
        f = split.full(Q) - g
        _check_finite(f, f"stage {i + 1} rhs", t)
        states.append(Q)
        explicit_rates.append(f)
        implicit_rates.append(g)
    terms = []
    for i in range(pair.s):
        terms.append(StageTerm(dt * ex.b[i], explicit_rates[i], states[i]))
        terms.append(StageTerm(dt * im.b[i], implicit_rates[i], states[i]))
    record = _finish(q, t, dt, terms)
    record.solve_stats = stats
    return record


def combined_ledger(ledger: StageLedger) -> StageLedger:
    """Merge consecutive explicit/implicit term pairs sharing a stage state.

    Valid only for pairs with equal weights; the merged ledger carries one
    term ``dt b_i (f_i + g_i)`` per stage.
    """
    terms = ledger.terms
    if len(terms) % 2:
        raise InvalidInput("ledger does not hold explicit/implicit term pairs")
    merged = []
    for f_term, g_term in zip(terms[::2], terms[1::2]):
        if f_term.state is not g_term.state or f_term.weight != g_term.weight:
            raise InvalidInput("paired terms differ in stage state or weight")
        merged.append(StageTerm(f_term.weight, f_term.rhs + g_term.rhs, f_term.state))
    return StageLedger(ledger.step_start, ledger.step_end_candidate, ledger.dt, ledger.t_start, merged)


# time loop


@dataclass
class Trajectory:
    times: list[float]
    entropy: list[float]
    mass: list[float]
    gamma: list[float]
    theta_residual: list[float]
    flags: list[tuple[str, ...]]
    final_state: np.ndarray
    checkpoints: dict[float, np.ndarray] = field(default_factory=dict)
    # entropy of the completed step before any limiter is applied
    entropy_completed: list[float] = field(default_factory=list)
    max_gamma_mismatch: float = 0.0
    max_residual_ratio: float = 0.0
    max_reconstruction_error: float = 0.0
    max_solve_residual: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def entropy_drift(self) -> float:
        e = np.asarray(self.entropy)
        return float(np.max(np.abs(e - e[0])))

    def mass_drift(self) -> float:
        m = np.asarray(self.mass)
        return float(np.max(np.abs(m - m[0])))

    def gamma_range(self) -> tuple[float, float]:
        g = self.gamma[1:]
        return (min(g), max(g)) if g else (1.0, 1.0)


Stepper = Callable[[np.ndarray, float, float], StepRecord]
Callback = Callable[[int, float, np.ndarray, RelaxationOutcome], None]


def integrate(step: Stepper, q0: np.ndarray, entropy: EntropySpec, T: float, dt: float,
              mode: str = "standard", *, t0: float = 0.0, checkpoints: Sequence[float] = (),
              mass: Callable[[np.ndarray], float] | None = None,
              limiter: Callable[[np.ndarray], np.ndarray] | None = None,
              callback: Callback | None = None, cross_check: bool = False) -> Trajectory:
    """Advance ``q0`` from ``t0`` to ``T`` with ``step(q, t, dt)``.

    Relaxation runs fit their last step so the relaxed time lands on ``T``
    (and on each checkpoint) to a relative ``1e-12``.
    """
    if mode not in MODES:
        raise InvalidInput(f"mode must be one of {MODES}, got {mode!r}")
    if not (dt > 0.0) or T < t0:
        raise InvalidInput("need dt > 0 and T >= t0")
    mass = mass or (lambda q: float(np.sum(q)))
    q = np.array(q0, dtype=float)
    t = t0
    eta0 = entropy.eta(q)
    traj = Trajectory([t], [eta0], [mass(q)], [1.0], [0.0], [()], q, entropy_completed=[eta0])
    targets = sorted({float(c) for c in checkpoints if t0 < c < T} | {float(T)})
    n = 0
    for target in targets:
        tol = TIME_RTOL * max(1.0, abs(target))
        while target - t > tol:
            remaining = target - t
            h = min(dt, remaining)
            aimed = h == remaining
            record, outcome = _relaxed_step(step, q, t, h, entropy, mode, cross_check)
            if mode == "relaxation":
                # fixed-point iteration h <- remaining / gamma(h)
                for _ in range(MAX_FIT_ITERATIONS):
                    end = t + outcome.gamma * h
                    if abs(end - target) <= tol or (end < target and not aimed):
                        break
                    h, aimed = remaining / outcome.gamma, True
                    record, outcome = _relaxed_step(step, q, t, h, entropy, mode, cross_check)
                else:
                    # gamma too noisy in h to hit the target: finish with an IDT completion
                    h = remaining
                    record, outcome = _relaxed_step(step, q, t, h, entropy, mode, cross_check)
                    outcome = replace(outcome, mode="idt", flags=outcome.flags + ("final_step_idt",))
            q_done, t_new = apply_completion(record.ledger, outcome.gamma, outcome.mode)
            if mode == "relaxation" and abs(t_new - target) <= tol:
                t_new = target
            elif mode != "relaxation" and aimed:
                t_new = target
            n += 1
            _record(traj, record, outcome, entropy, q_done)
            q = limiter(q_done) if limiter is not None else q_done
            t = t_new
            traj.times.append(t)
            traj.entropy.append(entropy.eta(q))
            traj.mass.append(mass(q))
            if callback is not None:
                callback(n, t, q, outcome)
        traj.checkpoints[target] = q.copy()
    traj.final_state = q
    return traj


def _relaxed_step(step: Stepper, q, t, h, entropy, mode, cross_check):
    record = step(q, t, h)
    return record, relax(record.ledger, entropy, mode, cross_check)


def _record(traj: Trajectory, record: StepRecord, outcome: RelaxationOutcome, entropy: EntropySpec,
            q_done: np.ndarray) -> None:
    ledger = record.ledger
    traj.gamma.append(outcome.gamma)
    traj.theta_residual.append(outcome.residual)
    traj.flags.append(outcome.flags)
    traj.entropy_completed.append(entropy.eta(q_done))
    traj.max_reconstruction_error = max(traj.max_reconstruction_error, ledger.reconstruction_error())
    for s in record.solve_stats:
        traj.max_solve_residual = max(traj.max_solve_residual, s["residual"])
    if outcome.mode in ("relaxation", "idt") and math.isfinite(outcome.residual):
        ratio = outcome.residual / theta_tolerance(ledger, entropy)
        traj.max_residual_ratio = max(traj.max_residual_ratio, ratio)
    if outcome.gamma_root is not None:
        traj.max_gamma_mismatch = max(traj.max_gamma_mismatch, abs(outcome.gamma - outcome.gamma_root))
