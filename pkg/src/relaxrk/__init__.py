"""Relaxation IMEX and multirate Runge-Kutta methods with entropy-conserving DG for Burgers."""

from .ark_imex import Trajectory, ark_step, erk_step, integrate
from .dg_burgers1d import DgOperator, build_nonuniform_mesh, uniform_mesh
from .errors import (
    ConfigError,
    DegenerateStep,
    InvalidInput,
    InvalidSpec,
    NoBracket,
    NonFinite,
    NotFound,
    RelaxRKError,
    SingularMatrix,
    SolverFailure,
)
from .harness import RunConfig, convergence_study, load_config, render_tables, run
from .multirate import Mrk2Scheme, assign_levels, balance_levels, build_activation_table, mrk2_gamma
from .problems import exponential_entropy_problem, pendulum_problem
from .relax_core import EntropySpec, StageLedger, gamma_general, gamma_quadratic, quadratic_entropy, relax
from .tableaux import builtin_tableau

__version__ = "0.1.0"
