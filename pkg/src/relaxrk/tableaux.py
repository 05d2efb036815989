"""Runge-Kutta coefficient sets: explicit, IMEX pairs and MRK2 zone tableaux.

Coefficients live in ``data/tableaux.json`` as exact rationals (or rationals
plus a multiple of sqrt(2)) and are converted to floats once at load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import NotFound

ROW_SUM_TOL = 1e-14
WEIGHT_SUM_TOL = 1e-14


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients ``(A, b, c)`` of one Runge-Kutta scheme."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        for attr in ("A", "b", "c"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @property
    def s(self) -> int:
        return len(self.b)

    @property
    def is_explicit(self) -> bool:
        return not np.any(np.triu(self.A))

    @property
    def is_diagonally_implicit(self) -> bool:
        return not np.any(np.triu(self.A, 1))

    @property
    def has_negative_weights(self) -> bool:
        return bool(np.any(self.b < 0))


@dataclass(frozen=True)
class ImexPair:
    explicit_part: ButcherTableau
    implicit_part: ButcherTableau
    name: str = ""

    @property
    def s(self) -> int:
        return self.explicit_part.s

    @property
    def weights_equal(self) -> bool:
        return bool(np.array_equal(self.explicit_part.b, self.implicit_part.b))


@dataclass(frozen=True)
class Mrk2ZoneTableaux:
    """Per-zone tableaux of the multirate scheme.

    ``fast`` drives the fast zone and fast buffer, ``slow_buffer`` the slow
    buffer and ``slow`` the slow zone; ``root_level`` is the two-stage base
    scheme used by the coarsest level.
    """

    fast: ButcherTableau
    slow_buffer: ButcherTableau
    slow: ButcherTableau
    root_level: ButcherTableau
    name: str = "mrk2"


@dataclass(frozen=True)
class SchemeInfo:
    name: str
    kind: str
    provenance: str
    exact: dict = field(default_factory=dict, compare=False)


def validate(t: ButcherTableau, *, require_explicit: bool | None = None) -> list[str]:
    """Return a list of violated structural invariants (empty if none)."""
    problems = []
    A, b, c = t.A, t.b, t.c
    s = len(b)
    if A.shape != (s, s) or c.shape != (s,):
        return [f"shape mismatch: A{A.shape}, b({s},), c{c.shape}"]
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(c)):
        problems.append("non-finite coefficient")
    if abs(b.sum() - 1.0) > WEIGHT_SUM_TOL:
        problems.append("weights do not sum to 1")
    for i in range(s):
        if abs(A[i].sum() - c[i]) > ROW_SUM_TOL:
            problems.append(f"row-sum mismatch at stage {i + 1}")
    if np.any(np.triu(A, 1)):
        problems.append("A is not lower triangular")
    if require_explicit and np.any(np.diag(A)):
        problems.append("explicit tableau has nonzero diagonal")
    return problems


def validate_pair(pair: ImexPair) -> list[str]:
    problems = [f"explicit: {p}" for p in validate(pair.explicit_part, require_explicit=True)]
    problems += [f"implicit: {p}" for p in validate(pair.implicit_part)]
    if pair.explicit_part.s != pair.implicit_part.s:
        problems.append("stage count differs between parts")
    return problems


def _parse_entry(entry) -> float:
    if isinstance(entry, dict):
        rational = Fraction(entry.get("rational", "0"))
        root = Fraction(entry.get("sqrt2", "0"))
        return float(rational) + float(root) * math.sqrt(2.0)
    return float(Fraction(entry))


def _parse_tableau(raw: dict, name: str) -> ButcherTableau:
    A = [[_parse_entry(x) for x in row] for row in raw["A"]]
    b = [_parse_entry(x) for x in raw["b"]]
    c = [_parse_entry(x) for x in raw["c"]]
    return ButcherTableau(np.array(A), np.array(b), np.array(c), name=name)


@lru_cache(maxsize=1)
def _load() -> dict:
    text = resources.files("relaxrk").joinpath("data/tableaux.json").read_text()
    return json.loads(text)


def available() -> list[str]:
    return sorted(_load()["schemes"])


def scheme_info(name: str) -> SchemeInfo:
    schemes = _load()["schemes"]
    if name not in schemes:
        raise NotFound(f"unknown scheme {name!r}; known: {', '.join(sorted(schemes))}")
    raw = schemes[name]
    return SchemeInfo(name=name, kind=raw["kind"], provenance=raw["provenance"], exact=raw)


@lru_cache(maxsize=None)
def builtin_tableau(name: str) -> ButcherTableau | ImexPair | Mrk2ZoneTableaux:
    """Load and validate a built-in coefficient set by name."""
    info = scheme_info(name)
    raw = info.exact
    if info.kind == "explicit":
        result = _parse_tableau(raw, name)
        problems = validate(result, require_explicit=True)
    elif info.kind == "imex":
        result = ImexPair(
            _parse_tableau(raw["explicit"], f"{name}/explicit"),
            _parse_tableau(raw["implicit"], f"{name}/implicit"),
            name=name,
        )
        problems = validate_pair(result)
    elif info.kind == "multirate":
        result = Mrk2ZoneTableaux(
            fast=_parse_tableau(raw["fast"], "mrk2/fast"),
            slow_buffer=_parse_tableau(raw["slow_buffer"], "mrk2/slow_buffer"),
            slow=_parse_tableau(raw["slow"], "mrk2/slow"),
            root_level=builtin_tableau(raw["root_level"]),
        )
        problems = []
        for part in (result.fast, result.slow_buffer, result.slow):
            problems += [f"{part.name}: {p}" for p in validate(part, require_explicit=True)]
    else:
        raise NotFound(f"scheme {name!r} has unknown kind {info.kind!r}")
    if problems:
        raise ValueError(f"built-in scheme {name!r} is invalid: {problems}")
    return result
