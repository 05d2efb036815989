"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Expensive experiments are cached per session so the cross-cutting checks
(root-solver agreement, mass, entropy stability) reuse the same runs.
"""

import math
import time
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from relaxrk.dg_burgers1d import DgOperator, build_nonuniform_mesh, uniform_mesh
from relaxrk.harness import (
    RunConfig,
    build_operator,
    build_setup,
    halving_ladder,
    load_config,
    observed_orders,
    reference_solution,
    run,
)
from relaxrk.multirate import active_stages, balance_levels, build_activation_table
from relaxrk.relax_core import MODES

from oracles import verify_balanced

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
REF_DT_UNIFORM = 2e-5
REF_DT_MULTIRATE = 1e-5

# relative errors at t = 0.2 reported for the uniform-mesh study (N=3, K=100)
REPORTED_ARK2 = {
    "ec": (1.25e-3, {
        "standard": [1.60e-5, 4.00e-6, 1.00e-6, 2.51e-7, 6.27e-8],
        "relaxation": [1.48e-5, 3.71e-6, 9.29e-7, 2.32e-7, 5.81e-8],
        "idt": [1.30e-4, 6.65e-5, 3.37e-5, 1.69e-5, 8.49e-6],
    }),
    "es": (5e-3, {
        "standard": [2.51e-4, 6.36e-5, 1.60e-5, 4.00e-6, 1.00e-6],
        "relaxation": [2.32e-4, 5.88e-5, 1.48e-5, 3.71e-6, 9.29e-7],
        "idt": [4.80e-4, 2.50e-4, 1.30e-4, 6.65e-5, 3.36e-5],
    }),
}
LADDER_START = {flux: start for flux, (start, _) in REPORTED_ARK2.items()}


@dataclass
class Row:
    dt: float
    l2: float
    linf: float
    traj: object
    l2_late: float = math.nan


def _timed(fn):
    start = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - start


def _errors(setup, q, ref):
    if q is None or not np.all(np.isfinite(q)):
        return math.nan, math.nan
    return setup.error(q, ref)


@lru_cache(maxsize=None)
def ode_runs(problem: str, dt: float, T: float):
    def go():
        return {m: run(RunConfig(problem, "ark2", dt, T, mode=m)).trajectory for m in MODES}
    return _timed(go)


@lru_cache(maxsize=None)
def burgers_ladder(scheme: str, flux: str):
    """Five-row halving ladder at t=0.2 on the uniform K=100 mesh, every mode."""

    def go():
        base = RunConfig("burgers", scheme, LADDER_START[flux], 0.2, flux=flux, mesh={"uniform": 100},
                         cross_check=True)
        op = build_operator(base)
        ref = reference_solution(base, REF_DT_UNIFORM, op=op)
        out = {}
        for mode in MODES:
            rows = []
            for dt in halving_ladder(base.dt, 5):
                cfg = replace(base, mode=mode, dt=dt)
                res = run(cfg, setup=build_setup(cfg, op))
                rows.append(Row(dt, *_errors(res.setup, res.final_state, ref), res.trajectory))
            out[mode] = rows
        return out
    return _timed(go)


@lru_cache(maxsize=None)
def multirate_ladder():
    """ES multirate ladder: every row to t=0.2, the two finest relaxed rows on to t=1."""

    def go():
        base = replace(load_config(CONFIGS / "mrk2_k196.json"), cross_check=True)
        op = build_operator(base)
        ref_cfg = replace(base, scheme="rk4", mode="standard", dt=REF_DT_MULTIRATE, cross_check=False)
        ref = run(ref_cfg, setup=build_setup(ref_cfg, op)).trajectory.checkpoints
        out = {}
        for mode in MODES:
            rows = []
            for i, dt in enumerate(halving_ladder(base.dt, 5)):
                late = mode != "standard" and i >= 3
                cfg = replace(base, mode=mode, dt=dt, T=1.0 if late else 0.2,
                              checkpoints=(0.2,) if late else ())
                res = run(cfg, setup=build_setup(cfg, op))
                traj = res.trajectory
                early = traj.checkpoints.get(0.2) if traj is not None else None
                row = Row(dt, *_errors(res.setup, early, ref[0.2]), traj)
                if late:
                    row.l2_late = _errors(res.setup, res.final_state, ref[1.0])[0]
                rows.append(row)
            out[mode] = rows
        return out
    return _timed(go)


@lru_cache(maxsize=None)
def limiter_runs():
    """Runs through the shock with the limiter, plus explicit single-rate schemes."""
    cases = []
    for mode in MODES:
        for flux in ("ec", "es"):
            cases.append(RunConfig("burgers", "ark2", 1.25e-3, 1.0, mode=mode, flux=flux,
                                   mesh={"uniform": 100}, limiter=True))
        cases.append(replace(load_config(CONFIGS / "mrk2_k196.json"), mode=mode, limiter=True, checkpoints=()))
        for scheme in ("rk2_ssp", "rk4"):
            cases.append(RunConfig("burgers", scheme, 5e-4, 0.5, mode=mode, flux="es", mesh={"uniform": 100}))
    return [(cfg, run(cfg).trajectory) for cfg in cases]


def _orders(rows, attr="l2"):
    return [o for o in observed_orders([getattr(r, attr) for r in rows]) if o is not None]


def _fmt_orders(orders):
    return "[" + ", ".join(f"{o:.2f}" for o in orders) + "]"


def _order_ok(orders, target, tol):
    # asymptotic rate: the finest pair of the ladder
    return bool(orders) and math.isfinite(orders[-1]) and abs(orders[-1] - target) <= tol


# criteria


def test_exponential_entropy_conservation(verdict):
    runs, elapsed = ode_runs("exponential", 0.1, 5.0)
    drift = {m: runs[m].entropy_drift() for m in MODES}
    ok = (drift["relaxation"] <= 1e-12 and drift["idt"] <= 1e-12 and drift["standard"] >= 1e-4
          and elapsed < 1.0)
    verdict(1, ok, f"entropy drift relaxation {drift['relaxation']:.2e}, idt {drift['idt']:.2e}, "
                   f"standard {drift['standard']:.2e}; {elapsed:.2f}s")
    assert ok


def test_pendulum_entropy_conservation(verdict):
    runs, elapsed = ode_runs("pendulum", 0.9, 1000.0)
    drift = {m: runs[m].entropy_drift() for m in MODES}
    ok = (drift["relaxation"] <= 1e-11 and drift["idt"] <= 1e-11 and drift["standard"] >= 1e-1
          and elapsed < 5.0)
    verdict(2, ok, f"entropy drift relaxation {drift['relaxation']:.2e}, idt {drift['idt']:.2e}, "
                   f"standard {drift['standard']:.2e}; {elapsed:.2f}s")
    assert ok


def test_second_order_imex_ladders(verdict):
    elapsed = 0.0
    ok = True
    parts = []
    worst_factor = 1.0
    for flux in ("ec", "es"):
        ladder, seconds = burgers_ladder("ark2", flux)
        elapsed += seconds
        for mode in MODES:
            orders = _orders(ladder[mode])
            target, tol = (1.0, 0.15) if mode == "idt" else (2.0, 0.1)
            ok &= _order_ok(orders, target, tol)
            parts.append(f"{flux}/{mode} orders {_fmt_orders(orders)}")
            for row, reported in zip(ladder[mode], REPORTED_ARK2[flux][1][mode]):
                factor = max(row.linf / reported, reported / row.linf) if row.linf > 0 else math.inf
                worst_factor = max(worst_factor, factor)
    ok &= worst_factor <= 3.0 and elapsed < 120.0
    ec = burgers_ladder("ark2", "ec")[0]["standard"][0]
    verdict(3, ok, "; ".join(parts) + f"; worst factor vs reported errors {worst_factor:.2f} "
                   f"(EC dt=1.25e-3: max-norm {ec.linf:.2e}, L2 {ec.l2:.2e}); {elapsed:.1f}s")
    assert ok


def test_third_order_imex_ladders(verdict):
    elapsed = 0.0
    ok = True
    parts = []
    for flux in ("ec", "es"):
        ladder, seconds = burgers_ladder("ark3", flux)
        elapsed += seconds
        for mode in MODES:
            orders = _orders(ladder[mode])
            ok &= _order_ok(orders, 2.0 if mode == "idt" else 3.0, 0.15)
            parts.append(f"{flux}/{mode} orders {_fmt_orders(orders)}")
    ok &= elapsed < 180.0
    verdict(4, ok, "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


def test_multirate_ladder(verdict):
    ladder, elapsed = multirate_ladder()
    ok = True
    parts = []
    for mode in MODES:
        orders = _orders(ladder[mode])
        ok &= _order_ok(orders, 2.0, 0.2)
        parts.append(f"{mode} orders {_fmt_orders(orders)}")
    ratios = [idt.l2_late / rel.l2_late for idt, rel in zip(ladder["idt"][3:], ladder["relaxation"][3:])]
    ok &= all(r >= 20.0 for r in ratios) and elapsed < 300.0
    verdict(5, ok, "; ".join(parts) + " at t=0.2; idt/relaxation error at t=1: "
                   + ", ".join(f"{r:.1f}x" for r in ratios) + f"; {elapsed:.1f}s")
    assert ok


def test_semidiscrete_entropy_identities(verdict):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    ops = [DgOperator(uniform_mesh(100), 3),
           DgOperator(build_nonuniform_mesh(load_config(CONFIGS / "mrk2_k196.json").mesh), 3)]
    worst_ec, worst_lf = 0.0, -math.inf
    for i in range(100):
        op = ops[i % 2]
        q = rng.standard_normal(op.ndof) * rng.uniform(0.1, 3.0)
        worst_ec = max(worst_ec, abs(op.inner(q, op.rhs_full(q, "ec").reshape(-1))))
        worst_lf = max(worst_lf, op.inner(q, op.rhs_full(q, "lf").reshape(-1)))
    elapsed = time.perf_counter() - start
    ok = worst_ec <= 1e-11 and worst_lf <= 1e-13 and elapsed < 10.0
    verdict(6, ok, f"max |<q,R(q)>| EC {worst_ec:.2e}, max <q,R(q)> LF {worst_lf:.2e}; {elapsed:.2f}s")
    assert ok


def test_gamma_cross_validation(verdict):
    quadratic, residual, failures = 0.0, 0.0, 0
    for problem, dt, T in (("exponential", 0.1, 5.0), ("pendulum", 0.9, 1000.0)):
        runs, _ = ode_runs(problem, dt, T)
        for mode in ("relaxation", "idt"):
            residual = max(residual, runs[mode].max_residual_ratio)
            failures += sum("no_bracket" in f for f in runs[mode].flags)
    ladders = [burgers_ladder(s, f)[0] for s in ("ark2", "ark3") for f in ("ec", "es")]
    ladders.append(multirate_ladder()[0])
    for ladder in ladders:
        for mode in ("relaxation", "idt"):
            for row in ladder[mode]:
                if row.traj is None:
                    failures += 1
                    continue
                quadratic = max(quadratic, row.traj.max_gamma_mismatch)
                failures += sum("no_bracket" in f for f in row.traj.flags)
    ok = quadratic <= 1e-10 and residual <= 1.0 and failures == 0
    verdict(7, ok, f"max |closed form - root| {quadratic:.2e}; max |theta| / (1e-12 max(1,|eta|)) "
                   f"{residual:.2f}; bracket failures {failures}")
    assert ok


def test_mass_conservation(verdict):
    plain, limited = 0.0, 0.0
    ladders = [burgers_ladder(s, f)[0] for s in ("ark2", "ark3") for f in ("ec", "es")]
    ladders.append(multirate_ladder()[0])
    count = 0
    for ladder in ladders:
        for rows in ladder.values():
            for row in rows:
                plain = max(plain, row.traj.mass_drift() if row.traj else math.inf)
                count += 1
    for cfg, traj in limiter_runs():
        drift = traj.mass_drift() if traj else math.inf
        if cfg.limiter:
            limited = max(limited, drift)
        else:
            plain = max(plain, drift)
    ok = plain <= 1e-12 and limited <= 1e-11
    verdict(8, ok, f"max mass drift without limiter {plain:.2e} ({count}+ runs), with limiter {limited:.2e}")
    assert ok


def test_multirate_scheduling(verdict):
    table = build_activation_table(2, [2, 1, 0])
    sets = [active_stages(table, b) for b in range(3)]
    sets_ok = sets == [list(range(1, 9)), [1, 4, 5, 8], [1, 8]]
    rng = np.random.default_rng(11)
    violations = 0
    for case in range(50):
        periodic = bool(case % 2)
        raw = rng.integers(0, 5, size=int(rng.integers(4, 41)))
        if not periodic:
            raw = np.concatenate([[raw[0]] * 3, raw, [raw[-1]] * 3])
        out = balance_levels(raw, 2, periodic)
        violations += len(verify_balanced(out, 2, periodic)) + int(np.any(out < raw))
    ok = sets_ok and violations == 0
    verdict(9, ok, f"active stage sets {sets}; balancing violations over 50 cases: {violations}")
    assert ok


def test_entropy_stability(verdict):
    runs = []  # (scheme label, trajectory)
    for scheme in ("ark2", "ark3"):
        ladder = burgers_ladder(scheme, "es")[0]
        runs += [(scheme, row.traj) for m in ("relaxation", "idt") for row in ladder[m]]
    ladder = multirate_ladder()[0]
    runs += [("mrk2", row.traj) for m in ("relaxation", "idt") for row in ladder[m]]
    runs += [(cfg.scheme + "+limiter" * cfg.limiter, traj) for cfg, traj in limiter_runs()
             if cfg.flux == "es" and cfg.mode in ("relaxation", "idt")]
    worst: dict[str, float] = {}
    checked = 0
    for label, traj in runs:
        if traj is None:
            worst[label] = math.inf
            continue
        before = np.asarray(traj.entropy[:-1])
        after = np.asarray(traj.entropy_completed[1:])
        excess = (after - before) / np.maximum(np.abs(before), 1e-300)
        worst[label] = max(worst.get(label, -math.inf), float(np.max(excess)))
        checked += len(after)
    ok = max(worst.values()) <= 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(10, ok, f"max relative entropy increase per step by scheme: {detail} "
                    f"({checked} steps in {len(runs)} runs)")
    assert ok
