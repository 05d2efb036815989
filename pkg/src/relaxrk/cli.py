"""Command line entry point: ``relaxrk <command> --config run.json``."""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import __version__
from .errors import ConfigError, RelaxRKError
from .harness import (
    EXIT_OK,
    RunConfig,
    convergence_study,
    halving_ladder,
    load_config,
    render_tables,
    run,
)
from .relax_core import MODES


def _load(path: str, **overrides) -> RunConfig:
    try:
        cfg = load_config(path)
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(cfg, **changes) if changes else cfg
    except ConfigError as exc:
        raise click.ClickException(f"config error at {exc}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}") from None


def _config_options(fn):
    fn = click.option("--limiter/--no-limiter", default=None, help="Apply the minmod limiter after each step.")(fn)
    fn = click.option("--flux", type=click.Choice(["ec", "es"]), default=None, help="Interface flux.")(fn)
    fn = click.option("--mode", type=click.Choice(MODES), default=None, help="Step completion.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                      required=True, help="JSON run configuration.")(fn)
    return fn


def _run_and_report(cfg: RunConfig, out: str | None, figures: bool = False) -> None:
    result = run(cfg, out)
    s = result.summary
    if result.status == "ok":
        click.echo(f"{cfg.problem}/{cfg.scheme}/{cfg.mode}: {s['steps']} steps to t={s['t_final']:.6g}, "
                   f"entropy drift {s['entropy_drift']:.3e}, mass drift {s['mass_drift']:.3e}, "
                   f"gamma in [{s['gamma_min']:.12f}, {s['gamma_max']:.12f}]")
        target = out or cfg.out
        if figures and target:
            from .figures import plot_run
            for path in plot_run(Path(target)):
                click.echo(f"wrote {path}")
    else:
        click.echo(f"run failed ({result.status}): {result.error}", err=True)
    sys.exit(result.exit_code)


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Relaxation IMEX and multirate Runge-Kutta experiments."""


@main.command()
@_config_options
@click.option("--figures", is_flag=True, help="Also render PNG plots of the series (needs matplotlib).")
def ode(config_path, out, mode, flux, limiter, figures):
    """Integrate one of the entropy-conserving ODEs."""
    cfg = _load(config_path, out=out, mode=mode)
    if cfg.is_pde:
        raise click.ClickException("config describes a Burgers run; use burgers-imex or burgers-multirate")
    _run_and_report(cfg, out, figures)


@main.command("burgers-imex")
@_config_options
@click.option("--figures", is_flag=True, help="Also render PNG plots of the series (needs matplotlib).")
def burgers_imex(config_path, out, mode, flux, limiter, figures):
    """Burgers on a single-rate mesh with an explicit or IMEX scheme."""
    cfg = _load(config_path, out=out, mode=mode, flux=flux, limiter=limiter)
    if not cfg.is_pde or cfg.scheme == "mrk2":
        raise click.ClickException("config must describe a single-rate Burgers run")
    _run_and_report(cfg, out, figures)


@main.command("burgers-multirate")
@_config_options
@click.option("--figures", is_flag=True, help="Also render PNG plots of the series (needs matplotlib).")
def burgers_multirate(config_path, out, mode, flux, limiter, figures):
    """Burgers on a nonuniform mesh with the multirate scheme."""
    cfg = _load(config_path, out=out, mode=mode, flux=flux, limiter=limiter)
    if not cfg.is_pde:
        raise click.ClickException("config must describe a Burgers run")
    _run_and_report(replace(cfg, scheme="mrk2"), out, figures)


@main.command()
@_config_options
@click.option("--levels", default=5, show_default=True, help="Number of halvings in the step ladder.")
@click.option("--ref-dt", type=float, default=None, help="Step of the RK4 reference (default: finest / 64).")
@click.option("--modes", default=",".join(MODES), show_default=True, help="Comma-separated completions.")
def converge(config_path, out, mode, flux, limiter, levels, ref_dt, modes):
    """Error ladder against an RK4 reference, starting from the config's dt."""
    cfg = _load(config_path, flux=flux, limiter=limiter)
    chosen = [m.strip() for m in (mode or modes).split(",") if m.strip()]
    for m in chosen:
        if m not in MODES:
            raise click.ClickException(f"unknown mode {m!r}")
    try:
        reports = convergence_study(cfg, halving_ladder(cfg.dt, levels), chosen, ref_dt=ref_dt,
                                    cache_dir=Path(out) / "cache" if out else None)
    except RelaxRKError as exc:
        raise click.ClickException(str(exc)) from None
    table = render_tables(reports)
    click.echo(table, nl=False)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "convergence.csv").write_text(render_tables(reports, "csv"))
        (Path(out) / "convergence.txt").write_text(table)
    sys.exit(EXIT_OK)


@main.command()
@click.argument("csv_files", nargs=-1, type=click.Path(exists=True, dir_okay=False))
def tables(csv_files):
    """Print convergence CSV files written by ``converge`` as aligned text."""
    import csv

    for path in csv_files:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            continue
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        click.echo(path)
        for r in rows:
            click.echo("  ".join(c.rjust(w) for c, w in zip(r, widths)))


if __name__ == "__main__":
    main()
