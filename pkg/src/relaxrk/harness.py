"""Experiment driver: run configurations, convergence ladders and report tables.

A run writes three artifacts to its output directory:

``series.csv``
    one row per step with columns ``step, t, mass, entropy, gamma, theta_residual``.
``snapshot.csv``
    the final state; Burgers runs give ``x, q, element, level`` per node,
    ODE runs ``component, q``.
``summary.json``
    status, step count, drifts and the range of the relaxation parameter.

Floats are written with ``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ark_imex import StepRecord, Trajectory, ark_step, erk_step, integrate
from .dg_burgers1d import DgOperator, build_nonuniform_mesh, flux_kind, gaussian, uniform_mesh
from .errors import ConfigError, NonFinite, NotFound, RelaxRKError
from .multirate import Mrk2Scheme
from .problems import PROBLEMS, imex_splitting_for_ode
from .relax_core import MODES, EntropySpec
from .tableaux import ButcherTableau, ImexPair, builtin_tableau

SCHEMA_VERSION = 1
THREADS_ENV = "RELAXRK_THREADS"
EXIT_OK, EXIT_BLOWUP = 0, 3
SERIES_COLUMNS = ("step", "t", "mass", "entropy", "gamma", "theta_residual")
REFERENCE_SCHEME = "rk4"

INITIAL_CONDITIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "gaussian": gaussian,
    "sine": lambda x: 0.5 + 0.25 * np.sin(np.pi * x),
}


# configuration


@dataclass(frozen=True)
class RunConfig:
    """One experiment.

    ``problem`` is an ODE name or ``"burgers"``.  For ``scheme="mrk2"``,
    ``dt`` is the root-level half step: a multirate cycle spans ``2 dt``.
    ``mesh`` is ``{"uniform": K}`` or a nonuniform mesh spec.
    """

    problem: str
    scheme: str
    dt: float
    T: float
    mode: str = "standard"
    flux: str = "ec"
    limiter: bool = False
    N: int = 3
    mesh: dict = field(default_factory=lambda: {"uniform": 100})
    initial: str = "gaussian"
    checkpoints: tuple[float, ...] = ()
    cross_check: bool = False
    out: str | None = None
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        validate_config(self)

    @property
    def is_pde(self) -> bool:
        return self.problem == "burgers"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checkpoints"] = list(self.checkpoints)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown field")
        for key in ("problem", "scheme", "dt", "T"):
            if key not in raw:
                raise ConfigError(key, "required field is missing")
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r}")
        data = dict(raw)
        if "checkpoints" in data:
            data["checkpoints"] = tuple(data["checkpoints"])
        return cls(**data)


def load_config(path: str | os.PathLike) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


def validate_config(cfg: RunConfig) -> None:
    if cfg.problem != "burgers" and cfg.problem not in PROBLEMS:
        raise ConfigError("problem", f"unknown problem {cfg.problem!r}")
    try:
        kind = builtin_tableau(cfg.scheme)
    except NotFound:
        raise ConfigError("scheme", f"unknown scheme {cfg.scheme!r}") from None
    if cfg.scheme == "mrk2" and not cfg.is_pde:
        raise ConfigError("scheme", "mrk2 needs the burgers problem")
    if not isinstance(kind, (ButcherTableau, ImexPair)) and cfg.scheme != "mrk2":
        raise ConfigError("scheme", f"scheme {cfg.scheme!r} cannot drive a run")
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}")
    if not (isinstance(cfg.dt, (int, float)) and cfg.dt > 0 and math.isfinite(cfg.dt)):
        raise ConfigError("dt", "must be a positive number")
    if not (isinstance(cfg.T, (int, float)) and cfg.T >= 0 and math.isfinite(cfg.T)):
        raise ConfigError("T", "must be a nonnegative number")
    try:
        flux_kind(cfg.flux)
    except RelaxRKError:
        raise ConfigError("flux", f"unknown flux {cfg.flux!r}") from None
    if not (isinstance(cfg.N, int) and cfg.N >= 1):
        raise ConfigError("N", "polynomial degree must be a positive integer")
    if cfg.is_pde:
        if cfg.initial not in INITIAL_CONDITIONS:
            raise ConfigError("initial", f"unknown initial condition {cfg.initial!r}")
        if not isinstance(cfg.mesh, dict):
            raise ConfigError("mesh", "must be an object")
        if "uniform" in cfg.mesh:
            K = cfg.mesh["uniform"]
            if not (isinstance(K, int) and K >= 1):
                raise ConfigError("mesh.uniform", "element count must be a positive integer")
        elif not ("regions" in cfg.mesh or "per_side" in cfg.mesh):
            raise ConfigError("mesh", "needs 'uniform', 'regions' or 'per_side'")
    for i, c in enumerate(cfg.checkpoints):
        if not (0 <= c <= cfg.T):
            raise ConfigError(f"checkpoints[{i}]", "must lie in [0, T]")


# building a run


@dataclass
class Setup:
    """Everything ``integrate`` needs, plus the spatial operator for Burgers runs."""

    step: Callable[[np.ndarray, float, float], StepRecord]
    q0: np.ndarray
    entropy: EntropySpec
    mass: Callable[[np.ndarray], float]
    step_size: float
    limiter: Callable[[np.ndarray], np.ndarray] | None = None
    op: DgOperator | None = None
    multirate: Mrk2Scheme | None = None

    def error(self, q: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
        """Relative (L2, max-norm) distance of ``q`` from ``ref``."""
        diff = q - ref
        if self.op is not None:
            l2 = math.sqrt(self.op.inner(diff, diff) / self.op.inner(ref, ref))
        else:
            l2 = float(np.linalg.norm(diff) / np.linalg.norm(ref))
        return l2, float(np.max(np.abs(diff)) / np.max(np.abs(ref)))


def build_operator(cfg: RunConfig) -> DgOperator:
    mesh_spec = cfg.mesh
    if "uniform" in mesh_spec:
        a, b = mesh_spec.get("domain", (-1.0, 1.0))
        mesh = uniform_mesh(int(mesh_spec["uniform"]), a, b, mesh_spec.get("periodic", True))
    else:
        mesh = build_nonuniform_mesh(mesh_spec)
    return DgOperator(mesh, cfg.N)


def build_setup(cfg: RunConfig, op: DgOperator | None = None) -> Setup:
    scheme = builtin_tableau(cfg.scheme)
    if not cfg.is_pde:
        problem = PROBLEMS[cfg.problem]()
        if isinstance(scheme, ImexPair):
            split = imex_splitting_for_ode(problem)
            step = lambda q, t, h: ark_step(split, scheme, q, t, h)
        else:
            step = lambda q, t, h: erk_step(problem.rhs, scheme, q, t, h)
        return Setup(step, problem.initial.copy(), problem.entropy, lambda q: float(np.sum(q)), cfg.dt)
    op = op or build_operator(cfg)
    flux = flux_kind(cfg.flux)
    q0 = op.project(INITIAL_CONDITIONS[cfg.initial]).reshape(-1)
    mass = lambda q: op.functionals(q)[0]
    limiter = op.apply_limiter if cfg.limiter else None
    if cfg.scheme == "mrk2":
        mr = Mrk2Scheme(op, flux)
        return Setup(mr.step, q0, op.energy_entropy(), mass, 2.0 * cfg.dt, limiter, op, mr)
    if isinstance(scheme, ImexPair):
        split = op.imex_split(flux)
        step = lambda q, t, h: ark_step(split, scheme, q, t, h)
    else:
        rhs = op.rhs(flux)
        step = lambda q, t, h: erk_step(rhs, scheme, q, t, h)
    return Setup(step, q0, op.energy_entropy(), mass, cfg.dt, limiter, op)


# running


@dataclass
class RunResult:
    config: RunConfig
    status: str
    trajectory: Trajectory | None
    summary: dict
    setup: Setup
    error: str | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.status == "ok" else EXIT_BLOWUP

    @property
    def final_state(self) -> np.ndarray | None:
        return None if self.trajectory is None else self.trajectory.final_state


def _fmt(x: float) -> str:
    return repr(float(x))


def series_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SERIES_COLUMNS)
    for n, row in enumerate(zip(traj.times, traj.mass, traj.entropy, traj.gamma, traj.theta_residual)):
        writer.writerow([n] + [_fmt(v) for v in row])
    return buf.getvalue()


def snapshot_csv(q: np.ndarray, setup: Setup) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    op = setup.op
    if op is None:
        writer.writerow(("component", "q"))
        for i, v in enumerate(q):
            writer.writerow([i, _fmt(v)])
        return buf.getvalue()
    levels = setup.multirate.levels if setup.multirate is not None else op.mesh.levels
    writer.writerow(("x", "q", "element", "level"))
    qe = op.field(q)
    for k in range(op.K):
        for j in range(op.N + 1):
            writer.writerow([_fmt(op.x[k, j]), _fmt(qe[k, j]), k, int(levels[k])])
    return buf.getvalue()


def summarize(cfg: RunConfig, traj: Trajectory | None, status: str, error: str | None) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "status": status, "config": cfg.to_dict()}
    if cfg.scheme != "mrk2":
        scheme = builtin_tableau(cfg.scheme)
        parts = (scheme.explicit_part, scheme.implicit_part) if isinstance(scheme, ImexPair) else (scheme,)
        # entropy stability of the relaxed step is only guaranteed for b >= 0
        out["negative_weights"] = any(p.has_negative_weights for p in parts)
    if error:
        out["error"] = error
    if traj is None:
        return out
    gmin, gmax = traj.gamma_range()
    out.update(
        steps=traj.steps,
        t_final=traj.times[-1],
        gamma_min=gmin,
        gamma_max=gmax,
        max_gamma_deviation=max((abs(g - 1.0) for g in traj.gamma[1:]), default=0.0),
        entropy_initial=traj.entropy[0],
        entropy_final=traj.entropy[-1],
        entropy_drift=traj.entropy_drift(),
        mass_drift=traj.mass_drift(),
        max_residual_ratio=traj.max_residual_ratio,
        max_gamma_mismatch=traj.max_gamma_mismatch,
        flagged_steps=sum(1 for f in traj.flags if f),
    )
    return out


def run(cfg: RunConfig, out_dir: str | os.PathLike | None = None, setup: Setup | None = None,
        callback=None) -> RunResult:
    """Integrate one configuration; write artifacts when an output directory is given.

    A non-finite state ends the run with status ``"blowup"`` rather than
    raising, so ladders can record the failure and continue.
    """
    setup = setup or build_setup(cfg)
    traj, status, error = None, "ok", None
    try:
        traj = integrate(setup.step, setup.q0, setup.entropy, cfg.T, setup.step_size, cfg.mode,
                         checkpoints=cfg.checkpoints, mass=setup.mass, limiter=setup.limiter,
                         callback=callback, cross_check=cfg.cross_check)
    except NonFinite as exc:
        status, error = "blowup", str(exc)
    summary = summarize(cfg, traj, status, error)
    out_dir = out_dir if out_dir is not None else cfg.out
    if out_dir is not None:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        if traj is not None:
            (path / "series.csv").write_text(series_csv(traj))
            (path / "snapshot.csv").write_text(snapshot_csv(traj.final_state, setup))
        (path / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(cfg, status, traj, summary, setup, error)


# convergence ladders


@dataclass
class LadderRow:
    dt: float
    error: float              # relative L2
    order: float | None       # log2 ratio with the previous row
    max_error: float          # relative max-norm
    max_order: float | None
    status: str = "ok"


@dataclass
class ConvergenceReport:
    label: str
    rows: list[LadderRow]
    reference: str
    flux: str = ""
    T: float = 0.0

    @property
    def orders(self) -> list[float]:
        return [r.order for r in self.rows if r.order is not None]

    def row(self, dt: float) -> LadderRow:
        for r in self.rows:
            if math.isclose(r.dt, dt, rel_tol=1e-9):
                return r
        raise NotFound(f"no ladder row at dt={dt}")


def observed_orders(errors: Sequence[float]) -> list[float | None]:
    out: list[float | None] = [None]
    for a, b in zip(errors, errors[1:]):
        ok = a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)
        out.append(math.log2(a / b) if ok else None)
    return out


def halving_ladder(dt0: float, count: int) -> list[float]:
    return [dt0 / 2 ** k for k in range(count)]


def _cache_key(cfg: RunConfig, ref_dt: float) -> str:
    d = cfg.to_dict()
    for k in ("mode", "scheme", "dt", "out", "seed", "cross_check", "checkpoints"):
        d.pop(k, None)
    d["reference"] = [REFERENCE_SCHEME, ref_dt]
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def reference_solution(cfg: RunConfig, ref_dt: float, cache_dir: str | os.PathLike | None = None,
                       op: DgOperator | None = None) -> np.ndarray:
    """RK4 solution with step ``ref_dt`` at ``cfg.T``, cached on disk when ``cache_dir`` is set."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"reference-{_cache_key(cfg, ref_dt)}.npy"
        if path.exists():
            return np.load(path)
    ref_cfg = replace(cfg, scheme=REFERENCE_SCHEME, mode="standard", dt=ref_dt, checkpoints=(),
                      cross_check=False, out=None)
    result = run(ref_cfg, setup=build_setup(ref_cfg, op))
    if result.status != "ok":
        raise NonFinite(f"reference run failed: {result.error}")
    q = result.final_state
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, q)
    return q


def ladder_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def convergence_study(base: RunConfig, dts: Sequence[float], modes: Sequence[str] = MODES,
                      reference: np.ndarray | None = None, ref_dt: float | None = None,
                      cache_dir: str | os.PathLike | None = None, label: str | None = None) -> list[ConvergenceReport]:
    """Error ladders against an RK4 reference, one report per mode.

    Errors are relative discrete L2 (mass weighted for Burgers) at ``T``;
    the max-norm error and its order are kept alongside.
    """
    op = build_operator(base) if base.is_pde else None
    if reference is None:
        ref_dt = ref_dt or min(dts) / 64
        reference = reference_solution(base, ref_dt, cache_dir, op)
        descriptor = f"{REFERENCE_SCHEME} dt={ref_dt:g}"
    else:
        descriptor = "given"
    jobs = [(mode, dt) for mode in modes for dt in dts]

    def one(job):
        mode, dt = job
        cfg = replace(base, mode=mode, dt=dt, checkpoints=(), out=None)
        res = run(cfg, setup=build_setup(cfg, op))
        if res.status != "ok":
            return math.nan, math.nan, res.status
        return (*res.setup.error(res.final_state, reference), "ok")

    threads = ladder_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    reports = []
    for i, mode in enumerate(modes):
        chunk = results[i * len(dts):(i + 1) * len(dts)]
        l2 = [c[0] for c in chunk]
        mx = [c[1] for c in chunk]
        rows = [LadderRow(dt, e, o, m, mo, s) for dt, e, o, m, mo, s in
                zip(dts, l2, observed_orders(l2), mx, observed_orders(mx), [c[2] for c in chunk])]
        name = f"{label or base.scheme}-{mode}"
        reports.append(ConvergenceReport(name, rows, descriptor, base.flux, base.T))
    return reports


# tables


def _num(x: float | None, spec: str) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return format(x, spec)


def render_tables(reports: Sequence[ConvergenceReport], fmt: str = "text") -> str:
    """One row per (flux, dt) with an error/order column pair per report.

    ``fmt`` is ``"text"`` for aligned columns or ``"csv"``.
    """
    labels = list(dict.fromkeys(r.label for r in reports))
    header = ["flux", "dt"]
    for name in labels:
        header += [f"{name} error", f"{name} order"]
    keyed: dict[tuple[str, float], dict[str, LadderRow]] = {}
    for rep in reports:
        for row in rep.rows:
            keyed.setdefault((rep.flux, row.dt), {})[rep.label] = row
    body = []
    for (flux, dt), cols in keyed.items():
        line = [flux, _num(dt, ".6g")]
        for name in labels:
            row = cols.get(name)
            line += [_num(row.error, ".2e") if row else "-", _num(row.order, ".2f") if row else "-"]
        body.append(line)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return buf.getvalue()
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + body]
    return "\n".join(lines) + "\n"
