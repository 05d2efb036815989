"""Second-order multirate Runge-Kutta (MRK2) on level blocks of a 1D DG mesh.

Elements carry a multirate level; consecutive elements of equal level form
a level block.  A block at level ``l >= 1`` runs ``2**(l-1)`` substeps of
the four-stage fast tableau per cycle, the level-0 blocks one SSP-RK2 step.
One cycle of length ``H`` synchronizes every block; a level-``l`` substep
spans ``H / 2**(l-1)`` (level 0: ``H``), so a level-``l`` element advances
in elementary half-steps of ``H / 2**l``.

Within a block the element nearest a coarser neighbour is the slow buffer,
the next one the fast buffer, and the rest the fast zone.  The coarser
neighbour's own elements play the part of the slow zone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .ark_imex import StepRecord
from .dg_burgers1d import DgOperator, Mesh1D, flux_kind
from .errors import InvalidInput, NonFinite
from .relax_core import LedgerMoments, StageLedger, StageTerm, gamma_quadratic
from .tableaux import Mrk2ZoneTableaux, builtin_tableau

ROOT, FAST_ZONE, FAST_BUFFER, SLOW_BUFFER = "root", "fz", "fb", "sb"
ZONE_CODES = {ROOT: 0, FAST_ZONE: 1, FAST_BUFFER: 2, SLOW_BUFFER: 3}
BUFFER_SIZE = 2


# level balancing


def _changes(levels: np.ndarray, periodic: bool) -> np.ndarray:
    """Indices ``i`` where the level differs between element ``i`` and ``i + 1``."""
    nxt = np.roll(levels, -1)
    idx = np.flatnonzero(nxt != levels)
    if not periodic:
        idx = idx[idx < len(levels) - 1]
    return idx


def _raise(levels: np.ndarray, lo: int, hi: int, value: int, periodic: bool) -> None:
    """``levels[lo:hi] = max(levels[lo:hi], value)`` with cyclic or clipped indexing."""
    K = len(levels)
    idx = np.arange(lo, hi)
    idx = idx % K if periodic else idx[(idx >= 0) & (idx < K)]
    levels[idx] = np.maximum(levels[idx], value)


def balance_levels(levels, bs: int = BUFFER_SIZE, periodic: bool = False) -> np.ndarray:
    """Raise levels until every run has at least ``bs + 1`` elements and jumps are at most one.

    Short runs between two level changes are lengthened as follows: a
    descending staircase pushes its lower step right, an ascending one
    pushes its upper step left, and a short valley is filled to the level
    on its left.  Short peaks are widened to the right, and jumps of more
    than one level are first padded with intermediate levels.  Levels are
    only ever raised, so the iteration terminates.
    """
    out = np.array(levels, dtype=int)
    K = len(out)
    if K == 0:
        return out
    if not periodic and K >= bs + 1:
        if np.any(out[: bs + 1] != out[0]) or np.any(out[K - bs - 1:] != out[-1]):
            raise InvalidInput(f"the first and last {bs + 1} elements must share a level")
    elif not periodic:
        raise InvalidInput(f"need at least {bs + 1} elements")
    while True:
        before = out.copy()
        # pad jumps larger than one
        while True:
            nxt = np.roll(out, -1)
            big = np.abs(nxt - out) > 1
            if not periodic:
                big[-1] = False
            if not big.any():
                break
            for i in np.flatnonzero(big):
                j = (i + 1) % K
                if out[i] < out[j]:
                    out[i] = max(out[i], out[j] - 1)
                else:
                    out[j] = max(out[j], out[i] - 1)
        lev = out.copy()
        idx = _changes(lev, periodic)
        pairs = list(zip(idx[:-1], idx[1:]))
        if periodic and len(idx) > 1:
            pairs.append((idx[-1], idx[0] + K))
        for k1, k2 in pairs:
            run = k2 - k1
            if run >= bs + 1:
                continue
            d1 = np.sign(lev[(k1 + 1) % K] - lev[k1 % K])
            d2 = np.sign(lev[(k2 + 1) % K] - lev[k2 % K])
            nc = bs + 1 - run
            run_level = lev[k2 % K]
            if d1 < 0 and d2 < 0:
                _raise(out, k2 + 1, k2 + 1 + nc, run_level, periodic)
            elif d1 < 0 < d2:
                _raise(out, k1 + 1, k2 + 1, max(out[k2 % K], lev[k1 % K]), periodic)
            elif d1 > 0 and d2 > 0:
                _raise(out, k1 + 1 - nc, k1 + 1, run_level, periodic)
            else:
                _raise(out, k2 + 1, k2 + 1 + nc, run_level, periodic)
        if not periodic and len(idx):
            # boundary runs can be eaten by the widening above; merge or widen them inward
            first, last = idx[0], idx[-1]
            if first + 1 < bs + 1:
                if lev[first + 1] > lev[0]:
                    _raise(out, 0, first + 1, lev[first + 1], False)
                else:
                    _raise(out, first + 1, bs + 1, lev[0], False)
            if K - 1 - last < bs + 1:
                if lev[last] > lev[-1]:
                    _raise(out, last + 1, K, lev[last], False)
                else:
                    _raise(out, K - bs - 1, last + 1, lev[-1], False)
        if np.array_equal(out, before):
            return out


def size_levels(mesh: Mesh1D) -> np.ndarray:
    h = mesh.h
    return np.rint(np.log2(h.max() / h)).astype(int)


def assign_levels(mesh: Mesh1D, bs: int = BUFFER_SIZE) -> np.ndarray:
    """Multirate levels: size levels, buffers promoted, then balanced.

    The ``bs`` coarse elements next to every finer region are promoted to
    the finer level so that they can serve as its fast and slow buffers.
    """
    base = size_levels(mesh)
    K = len(base)
    out = base.copy()
    for i in _changes(base, mesh.periodic):
        j = (i + 1) % K
        if base[i] < base[j]:
            _raise(out, i + 1 - bs, i + 1, base[j], mesh.periodic)
        else:
            _raise(out, j, j + bs, base[i], mesh.periodic)
    return balance_levels(out, bs, mesh.periodic)


# level blocks and activation


@dataclass
class LevelBlock:
    id: int
    level: int
    elements: np.ndarray          # element indices, left to right
    zones: list[str]
    left: int | None = None       # neighbouring block ids
    right: int | None = None

    @property
    def substeps(self) -> int:
        return 1 if self.level == 0 else 2 ** (self.level - 1)

    @property
    def local_stages(self) -> int:
        return 2 if self.level == 0 else 4

    def substep_fraction(self) -> float:
        """Substep length as a fraction of the cycle."""
        return 1.0 / self.substeps


def build_blocks(levels, periodic: bool = True, bs: int = BUFFER_SIZE) -> list[LevelBlock]:
    levels = np.asarray(levels, dtype=int)
    K = len(levels)
    starts = [0] + [i + 1 for i in _changes(levels, False)]
    runs = [np.arange(a, b) for a, b in zip(starts, starts[1:] + [K])]
    if periodic and len(runs) > 1 and levels[0] == levels[-1]:
        runs = [np.concatenate([runs[-1], runs[0]])] + runs[1:-1]
    blocks = [LevelBlock(i, int(levels[r[0]]), r, []) for i, r in enumerate(runs)]
    n = len(blocks)
    for b in blocks:
        if periodic and n > 1:
            b.left, b.right = (b.id - 1) % n, (b.id + 1) % n
        else:
            b.left = b.id - 1 if b.id > 0 else None
            b.right = b.id + 1 if b.id < n - 1 else None
    for b in blocks:
        for nb in (b.left, b.right):
            if nb is not None and abs(blocks[nb].level - b.level) != 1:
                raise InvalidInput(f"blocks {b.id} and {nb} differ by more than one level")
        zones = [ROOT if b.level == 0 else FAST_ZONE] * len(b.elements)
        if b.level > 0:
            coarse_sides = [side for side, nb in (("left", b.left), ("right", b.right))
                            if nb is not None and blocks[nb].level < b.level]
            if len(b.elements) < 2 * len(coarse_sides) + 1:
                raise InvalidInput(f"block {b.id} (level {b.level}) is too short for its buffers")
            if "left" in coarse_sides:
                zones[0], zones[1] = SLOW_BUFFER, FAST_BUFFER
            if "right" in coarse_sides:
                zones[-1], zones[-2] = SLOW_BUFFER, FAST_BUFFER
        b.zones = zones
    return blocks


def build_activation_table(L_max: int, block_levels) -> np.ndarray:
    """Binary ``(s_G, N_B)`` table of the global stages at which each block is active."""
    s_G = 2 ** (L_max + 1)
    levels = [b.level if isinstance(b, LevelBlock) else int(b) for b in block_levels]
    table = np.zeros((s_G, len(levels)), dtype=np.int8)
    for B, lev in enumerate(levels):
        if lev > L_max or lev < 0:
            raise InvalidInput(f"level {lev} outside 0..{L_max}")
        d = 2 ** (L_max + 1 - lev)
        for i in range(2 ** lev):
            table[d * i, B] = 1
            table[s_G - 1 - d * i, B] = 1
    return table


def active_stages(table: np.ndarray, block: int) -> list[int]:
    """One-based global stages at which ``block`` is active."""
    return [int(g) + 1 for g in np.flatnonzero(table[:, block])]


# stepping


@dataclass
class _StagePlan:
    """Precomputed work of one global stage."""

    elements: np.ndarray       # active elements
    slot: np.ndarray           # local stage index (0-based) per active element
    coef_a: np.ndarray         # (n, 4): stage-state coefficients in units of the cycle
    start_new: np.ndarray      # elements that finish a substep before this stage
    coef_b: np.ndarray         # (n_new, 4): completion coefficients of that substep
    weight: np.ndarray         # ledger weight per active element, in units of the cycle
    deferred: np.ndarray       # slow-buffer elements evaluating their stage-2 rhs now
    deferred_left_fb: np.ndarray
    deferred_right_fb: np.ndarray
    deferred_weight: np.ndarray
    blocks: list[tuple[int, int, int]]   # (block, substep, local stage), 1-based


@dataclass
class Mrk2Scheme:
    """Multirate stepper for the DG Burgers operator.

    ``step(q, t, H)`` advances one cycle of length ``H``.  With
    ``store_terms`` the ledger keeps one term per global stage; otherwise
    running sums for the quadratic energy are accumulated.
    """

    op: DgOperator
    flux: str
    levels: np.ndarray | None = None
    tableaux: Mrk2ZoneTableaux | None = None
    store_terms: bool = False
    record_trace: bool = False
    blocks: list[LevelBlock] = field(init=False)
    table: np.ndarray = field(init=False)
    trace: list[tuple] = field(init=False, default_factory=list)

    def __post_init__(self):
        self.flux = flux_kind(self.flux)
        mesh = self.op.mesh
        if self.levels is None:
            self.levels = assign_levels(mesh)
        self.levels = np.asarray(self.levels, dtype=int)
        if len(self.levels) != mesh.K:
            raise InvalidInput("one level per element is required")
        self.tableaux = self.tableaux or builtin_tableau("mrk2")
        self.blocks = build_blocks(self.levels, mesh.periodic)
        self.L_max = int(self.levels.max())
        self.table = build_activation_table(self.L_max, self.blocks)
        self._check_synchronization()
        self._plans = self._plan()

    @property
    def global_stages(self) -> int:
        return self.table.shape[0]

    def zone_of_elements(self) -> list[str]:
        zones = [""] * self.op.K
        for b in self.blocks:
            for e, z in zip(b.elements, b.zones):
                zones[e] = z
        return zones

    def block_of_elements(self) -> np.ndarray:
        out = np.zeros(self.op.K, dtype=int)
        for b in self.blocks:
            out[b.elements] = b.id
        return out

    def _local_schedule(self, b: LevelBlock) -> dict[int, tuple[int, int]]:
        """Global stage (0-based) -> (substep, local stage), both 0-based."""
        stages = np.flatnonzero(self.table[:, b.id])
        n = b.local_stages
        return {int(g): (k // n, k % n) for k, g in enumerate(stages)}

    def _check_synchronization(self) -> None:
        for b in self.blocks:
            if b.level == 0:
                continue
            sched = self._local_schedule(b)
            if len(sched) != b.substeps * 4:
                raise AssertionError(f"block {b.id} has {len(sched)} active stages")
            for nb in (b.left, b.right):
                if nb is None or self.blocks[nb].level > b.level:
                    continue
                coarse = set(np.flatnonzero(self.table[:, nb]).tolist())
                sync = {g for g, (_, i) in sched.items() if i in (0, 3)}
                if coarse != sync:
                    raise AssertionError(f"block {b.id} is not synchronized with block {nb}")

    def _plan(self) -> list[_StagePlan]:
        tabs = {ROOT: self.tableaux.root_level, FAST_ZONE: self.tableaux.fast,
                FAST_BUFFER: self.tableaux.fast, SLOW_BUFFER: self.tableaux.slow_buffer}
        A = {z: np.pad(t.A, ((0, 4 - t.s), (0, 4 - t.s))) for z, t in tabs.items()}
        bw = {z: np.pad(t.b, (0, 4 - t.s)) for z, t in tabs.items()}
        scheds = [self._local_schedule(b) for b in self.blocks]
        plans = []
        for g in range(self.global_stages):
            els, slots, ca, new, cb, wt = [], [], [], [], [], []
            dfr, dl, dr, dw, info = [], [], [], [], []
            for b in self.blocks:
                if g not in scheds[b.id]:
                    continue
                r, i = scheds[b.id][g]
                frac = b.substep_fraction()
                info.append((b.id, r + 1, i + 1))
                for pos, (e, z) in enumerate(zip(b.elements, b.zones)):
                    els.append(e)
                    slots.append(i)
                    ca.append(frac * A[z][i])
                    deferred_slot = z == SLOW_BUFFER and i == 1
                    wt.append(0.0 if deferred_slot else frac * bw[z][i])
                    if i == 0 and r > 0:
                        new.append(e)
                        cb.append(frac * bw[z])
                    if z == SLOW_BUFFER and i == 3:
                        dfr.append(e)
                        dl.append(pos > 0 and b.zones[pos - 1] == FAST_BUFFER)
                        dr.append(pos < len(b.zones) - 1 and b.zones[pos + 1] == FAST_BUFFER)
                        dw.append(frac * bw[z][1])
            plans.append(_StagePlan(
                np.array(els, dtype=int), np.array(slots, dtype=int), np.array(ca).reshape(-1, 4),
                np.array(new, dtype=int), np.array(cb).reshape(-1, 4), np.array(wt),
                np.array(dfr, dtype=int), np.array(dl, dtype=bool), np.array(dr, dtype=bool),
                np.array(dw), info))
        return plans

    # the cycle

    def step(self, q: np.ndarray, t: float, H: float) -> StepRecord:
        op = self.op
        shape = op.shape
        q0 = np.asarray(q, dtype=float)
        U = q0.reshape(shape).copy()          # current stage state of every element
        Y = U.copy()                          # substep start
        R = np.zeros((4,) + shape)
        Q2 = U.copy()                         # stored stage-2 states (slow-buffer deferral)
        left_of, right_of, mass = op.left_of, op.right_of, op.mass
        store = self.store_terms
        terms: list[StageTerm] = []
        update = np.zeros(shape)
        production = relative = 0.0
        if self.record_trace:
            self.trace = []
        for g, plan in enumerate(self._plans):
            E = plan.elements
            if len(plan.start_new):
                Y[plan.start_new] += H * np.einsum("ej,jek->ek", plan.coef_b, R[:, plan.start_new])
            Q = Y[E] + H * np.einsum("ej,jek->ek", plan.coef_a, R[:, E])
            U[E] = Q
            second = plan.slot == 1
            Q2[E[second]] = Q[second]
            rhs = op.rhs_local(Q, U[left_of[E], -1], U[right_of[E], 0], E, self.flux)
            R[plan.slot, E] = rhs
            contrib = (H * plan.weight)[:, None] * rhs
            if len(plan.deferred):
                S = plan.deferred
                lt = np.where(plan.deferred_left_fb, Q2[left_of[S], -1], U[left_of[S], -1])
                rt = np.where(plan.deferred_right_fb, Q2[right_of[S], 0], U[right_of[S], 0])
                rd = op.rhs_local(Q2[S], lt, rt, S, self.flux)
                R[1, S] = rd
                dcontrib = (H * plan.deferred_weight)[:, None] * rd
            if not np.all(np.isfinite(rhs)):
                raise NonFinite(f"non-finite multirate stage {g + 1} near t={t:.6g}")
            if store:
                w = np.zeros(shape)
                w[E] = (H * plan.weight)[:, None]
                full_r = np.zeros(shape)
                full_r[E] = rhs
                terms.append(StageTerm(w.reshape(-1), full_r.reshape(-1), U.reshape(-1).copy()))
                if len(plan.deferred):
                    w = np.zeros(shape)
                    w[S] = (H * plan.deferred_weight)[:, None]
                    full_r = np.zeros(shape)
                    full_r[S] = rd
                    state = U.copy()
                    state[S] = Q2[S]
                    terms.append(StageTerm(w.reshape(-1), full_r.reshape(-1), state.reshape(-1)))
            else:
                np.add.at(update, E, contrib)
                production += float(np.sum(mass[E] * contrib * Q))
                relative += float(np.sum(mass[E] * contrib * (Q - q0.reshape(shape)[E])))
                if len(plan.deferred):
                    np.add.at(update, S, dcontrib)
                    production += float(np.sum(mass[S] * dcontrib * Q2[S]))
                    relative += float(np.sum(mass[S] * dcontrib * (Q2[S] - q0.reshape(shape)[S])))
            if self.record_trace:
                self._trace_stage(g, plan)
        # completion of the last substep of every block
        final = Y.copy()
        for b in self.blocks:
            frac = b.substep_fraction()
            for e, z in zip(b.elements, b.zones):
                tab = self.tableaux.root_level if z == ROOT else (
                    self.tableaux.slow_buffer if z == SLOW_BUFFER else self.tableaux.fast)
                final[e] = Y[e] + H * frac * np.tensordot(tab.b, R[: tab.s, e], axes=1)
        q_next = final.reshape(np.shape(q0))
        if not np.all(np.isfinite(q_next)):
            raise NonFinite(f"non-finite multirate update near t={t:.6g}")
        moments = None if store else LedgerMoments(update.reshape(-1), production, relative)
        ledger = StageLedger(q0.reshape(-1), q_next.reshape(-1), H, t, terms, moments)
        return StepRecord(ledger)

    def _trace_stage(self, g: int, plan: _StagePlan) -> None:
        active = {b for b, _, _ in plan.blocks}
        for b in self.blocks:
            if b.id not in active:
                self.trace.append((g + 1, b.id, "-", 0, 0, "hold"))
        for bid, r, i in plan.blocks:
            b = self.blocks[bid]
            for z in sorted(set(b.zones), key=ZONE_CODES.get):
                action = "hold" if (z == SLOW_BUFFER and i == 2) else "evaluate"
                self.trace.append((g + 1, bid, z, r, i, action))
                if z == SLOW_BUFFER and i == 4:
                    self.trace.append((g + 1, bid, z, r, 2, "evaluate"))
            for nb in (b.left, b.right):
                if nb is not None and nb in active and nb > bid:
                    self.trace.append((g + 1, bid, f"interface:{nb}", r, i, "exchange"))


TRACE_COLUMNS = ("global_stage", "block", "zone", "substep", "local_stage", "action")


def write_trace_csv(trace: list[tuple], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(trace)


def mrk2_gamma(ledger: StageLedger, op: DgOperator) -> float:
    """Explicit relaxation parameter for the quadratic energy over all blocks and zones."""
    return gamma_quadratic(ledger, op.inner)
