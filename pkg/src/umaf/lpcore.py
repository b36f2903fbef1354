"""Self-contained dense LP kernel: bounded-variable revised simplex.

Minimization only.  Rows are <=, =, >= with a right-hand side; columns have
a cost, sparse row entries, and (possibly infinite) bounds.  The solver
returns an optimal basic solution with row duals.  Pivoting is Dantzig with
a smallest-index (Bland) fallback that engages after a run of degenerate
pivots; all tie-breaks are by smallest index, so identical inputs produce
identical bases and duals.

Sign convention for duals of a minimization: >= rows have dual >= 0,
<= rows have dual <= 0 (reduced cost of every column stays >= 0 at
optimality).

Scale target: a few thousand columns by a couple thousand rows, dense.
An external engine can replace this module behind the same ``solve``
contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

INF = float("inf")
FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_TOL = 1e-9
DEGENERATE_STREAK = 40  # pivots without progress before Bland engages
REFACTOR_EVERY = 128


class LpError(Exception):
    pass


class LpNumericError(LpError):
    """Singular basis beyond recovery or iteration runaway."""


@dataclass
class _Column:
    cost: float
    entries: Dict[int, float]
    lower: float
    upper: float


class LinearProgram:
    """Minimization LP assembled row-by-row / column-by-column.

    Row and column ids are assigned in creation order and never reused,
    so basis snapshots stay meaningful as the program grows.
    """

    def __init__(self):
        self.rows: List[Tuple[str, float]] = []  # (relation, rhs)
        self.cols: List[_Column] = []

    def add_row(self, relation: str, rhs: float) -> int:
        if relation not in ("<=", ">=", "="):
            raise LpError(f"unknown relation {relation!r}")
        self.rows.append((relation, float(rhs)))
        return len(self.rows) - 1

    def add_column(
        self,
        cost: float,
        entries,
        lower: float = 0.0,
        upper: float = INF,
    ) -> int:
        if lower > upper:
            raise LpError("lower bound exceeds upper bound")
        ent = dict(entries)
        for r in ent:
            if not 0 <= r < len(self.rows):
                raise LpError(f"column references unknown row {r}")
        self.cols.append(_Column(float(cost), ent, float(lower), float(upper)))
        return len(self.cols) - 1

    def set_bounds(self, col: int, lower: float, upper: float) -> None:
        if lower > upper:
            raise LpError("lower bound exceeds upper bound")
        self.cols[col].lower = float(lower)
        self.cols[col].upper = float(upper)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.cols)


@dataclass(frozen=True)
class Basis:
    """Snapshot: basic variables plus the nonbasic-at-upper set.  Variables
    are named ("col", id) or ("slack", row).  ``n_rows`` records the program
    height at snapshot time; rows added later re-enter with their slacks
    basic (block-triangular, so the padded basis stays nonsingular)."""

    basic: Tuple[Tuple[str, int], ...]
    at_upper: Tuple[Tuple[str, int], ...]
    n_rows: int


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    objective: float
    primal: np.ndarray  # per column id
    dual: np.ndarray  # per row id
    basis: Optional[Basis] = None
    iterations: int = 0


_AT_LOWER, _AT_UPPER, _FREE_ZERO = 0, 1, 2


class _Tableau:
    """Dense working state: structural columns, then one slack per row,
    then (phase 1 only) artificials."""

    def __init__(self, lp: LinearProgram):
        m = lp.n_rows
        n = lp.n_cols
        self.m, self.n = m, n
        self.a = np.zeros((m, n + m))
        self.cost = np.zeros(n + m)
        self.lo = np.zeros(n + m)
        self.up = np.zeros(n + m)
        self.b = np.zeros(m)
        for j, col in enumerate(lp.cols):
            self.cost[j] = col.cost
            self.lo[j] = col.lower
            self.up[j] = col.upper
            for r, coef in col.entries.items():
                self.a[r, j] = coef
        for i, (rel, rhs) in enumerate(lp.rows):
            self.b[i] = rhs
            s = n + i
            self.a[i, s] = 1.0
            if rel == "<=":
                self.lo[s], self.up[s] = 0.0, INF
            elif rel == ">=":
                self.lo[s], self.up[s] = -INF, 0.0
            else:
                self.lo[s], self.up[s] = 0.0, 0.0

    def add_artificials(self, signs: np.ndarray) -> np.ndarray:
        """One artificial per row with the given coefficient sign; returns
        their variable indices."""
        m = self.m
        k = self.a.shape[1]
        art = np.arange(k, k + m)
        block = np.zeros((m, m))
        np.fill_diagonal(block, signs)
        self.a = np.hstack([self.a, block])
        self.cost = np.concatenate([self.cost, np.zeros(m)])
        self.lo = np.concatenate([self.lo, np.zeros(m)])
        self.up = np.concatenate([self.up, np.full(m, INF)])
        return art


def _default_state(lo: np.ndarray, up: np.ndarray) -> np.ndarray:
    state = np.full(lo.shape[0], _AT_LOWER, dtype=np.int8)
    state[np.isneginf(lo) & np.isposinf(up)] = _FREE_ZERO
    state[np.isneginf(lo) & ~np.isposinf(up)] = _AT_UPPER
    return state


def _nonbasic_value(j: int, state: np.ndarray, lo, up) -> float:
    s = state[j]
    if s == _AT_LOWER:
        return lo[j]
    if s == _AT_UPPER:
        return up[j]
    return 0.0


class _Engine:
    def __init__(self, tab: _Tableau, basic: np.ndarray, state: np.ndarray):
        self.tab = tab
        self.basic = basic.copy()
        self.state = state.copy()
        self.is_basic = np.zeros(tab.a.shape[1], dtype=bool)
        self.is_basic[self.basic] = True
        self.binv = None
        self.xb = None
        self.iterations = 0
        self.refactor()

    def refactor(self) -> None:
        bmat = self.tab.a[:, self.basic]
        try:
            self.binv = np.linalg.inv(bmat)
        except np.linalg.LinAlgError:
            raise LpNumericError("singular basis") from None
        self.compute_xb()

    def compute_xb(self) -> None:
        tab = self.tab
        rhs = tab.b.astype(float).copy()
        nb = np.flatnonzero(~self.is_basic)
        vals = np.array(
            [_nonbasic_value(j, self.state, tab.lo, tab.up) for j in nb]
        )
        if nb.size:
            nz = vals != 0.0
            if nz.any():
                rhs -= tab.a[:, nb[nz]] @ vals[nz]
        self.xb = self.binv @ rhs

    def primal_infeasibility(self) -> float:
        lo_b = self.tab.lo[self.basic]
        up_b = self.tab.up[self.basic]
        below = np.maximum(lo_b - self.xb, 0.0)
        above = np.maximum(self.xb - up_b, 0.0)
        below[np.isinf(below)] = 0.0
        above[np.isinf(above)] = 0.0
        return float(below.sum() + above.sum())

    def iterate(self, cost: np.ndarray, max_iter: int) -> str:
        """Primal simplex to optimality on a feasible basis."""
        tab = self.tab
        degenerate = 0
        since_refactor = 0
        for _ in range(max_iter):
            y = cost[self.basic] @ self.binv
            d = cost - y @ tab.a
            fixed = tab.lo == tab.up
            cand_lo = (~self.is_basic) & (self.state == _AT_LOWER) & ~fixed & (
                d < -OPT_TOL
            )
            cand_up = (~self.is_basic) & (self.state == _AT_UPPER) & ~fixed & (
                d > OPT_TOL
            )
            cand_fr = (~self.is_basic) & (self.state == _FREE_ZERO) & (
                np.abs(d) > OPT_TOL
            )
            viol = np.where(cand_lo, -d, 0.0) + np.where(cand_up, d, 0.0)
            viol = np.where(cand_fr, np.abs(d), viol)
            if not viol.any():
                return "optimal"
            if degenerate >= DEGENERATE_STREAK:
                j = int(np.flatnonzero(viol > 0)[0])  # Bland: smallest index
            else:
                j = int(np.argmax(viol))
            direction = 1.0
            if self.state[j] == _AT_UPPER or (
                self.state[j] == _FREE_ZERO and d[j] > 0
            ):
                direction = -1.0

            w = self.binv @ tab.a[:, j]
            # ratio test: entering moves by t >= 0 in `direction`
            span = tab.up[j] - tab.lo[j]
            t_best = span if np.isfinite(span) else INF
            leave_pos = -1
            leave_to_upper = False
            delta = -direction * w
            for i in range(self.tab.m):
                di = delta[i]
                if di > PIVOT_TOL:
                    cap = tab.up[self.basic[i]]
                    if np.isfinite(cap):
                        lim = (cap - self.xb[i]) / di
                        if lim < t_best - PIVOT_TOL or (
                            lim < t_best + PIVOT_TOL
                            and leave_pos >= 0
                            and self.basic[i] < self.basic[leave_pos]
                        ):
                            t_best = max(lim, 0.0)
                            leave_pos = i
                            leave_to_upper = True
                elif di < -PIVOT_TOL:
                    floor = tab.lo[self.basic[i]]
                    if np.isfinite(floor):
                        lim = (self.xb[i] - floor) / (-di)
                        if lim < t_best - PIVOT_TOL or (
                            lim < t_best + PIVOT_TOL
                            and leave_pos >= 0
                            and self.basic[i] < self.basic[leave_pos]
                        ):
                            t_best = max(lim, 0.0)
                            leave_pos = i
                            leave_to_upper = False
            if not np.isfinite(t_best):
                return "unbounded"
            degenerate = degenerate + 1 if t_best <= FEAS_TOL else 0
            self.iterations += 1
            since_refactor += 1
            if leave_pos < 0:
                # bound flip: entering crosses to its other bound
                self.xb = self.xb + delta * t_best
                self.state[j] = (
                    _AT_UPPER if self.state[j] == _AT_LOWER else _AT_LOWER
                )
                continue
            enter_val = _nonbasic_value(j, self.state, tab.lo, tab.up)
            enter_val += direction * t_best
            leaving = self.basic[leave_pos]
            self.xb = self.xb + delta * t_best
            # basis exchange
            pivot = w[leave_pos]
            if abs(pivot) < PIVOT_TOL:
                raise LpNumericError("zero pivot")
            self.binv[leave_pos] /= pivot
            others = np.arange(self.tab.m) != leave_pos
            self.binv[others] -= np.outer(w[others], self.binv[leave_pos])
            self.basic[leave_pos] = j
            self.is_basic[leaving] = False
            self.is_basic[j] = True
            self.state[leaving] = _AT_UPPER if leave_to_upper else _AT_LOWER
            self.xb[leave_pos] = enter_val
            if since_refactor >= REFACTOR_EVERY:
                since_refactor = 0
                self.refactor()
        raise LpNumericError("iteration limit exceeded")


def _basis_from_snapshot(lp: LinearProgram, tab: _Tableau, snap: Basis):
    name_to_index = {}
    for j in range(lp.n_cols):
        name_to_index[("col", j)] = j
    for r in range(lp.n_rows):
        name_to_index[("slack", r)] = lp.n_cols + r
    if snap.n_rows > lp.n_rows or len(snap.basic) != snap.n_rows:
        return None
    basic = []
    for name in snap.basic:
        j = name_to_index.get(tuple(name))
        if j is None:
            return None
        basic.append(j)
    for r in range(snap.n_rows, lp.n_rows):
        basic.append(lp.n_cols + r)
    if len(set(basic)) != len(basic):
        return None
    state = _default_state(tab.lo, tab.up)
    for name in snap.at_upper:
        j = name_to_index.get(tuple(name))
        if j is None:
            return None
        if np.isfinite(tab.up[j]):
            state[j] = _AT_UPPER
    return np.array(basic, dtype=int), state


def _snapshot(lp: LinearProgram, engine: _Engine) -> Optional[Basis]:
    def name(j: int):
        return ("col", j) if j < lp.n_cols else ("slack", j - lp.n_cols)

    if (engine.basic >= lp.n_cols + lp.n_rows).any():
        return None  # a pinned artificial stayed basic; not warm-startable
    basic = tuple(name(int(j)) for j in engine.basic)
    at_up = tuple(
        name(j)
        for j in range(lp.n_cols + lp.n_rows)
        if not engine.is_basic[j] and engine.state[j] == _AT_UPPER
    )
    return Basis(basic, at_up, lp.n_rows)


def solve(
    lp: LinearProgram,
    warm_start: Optional[Basis] = None,
    max_iter: int = 100000,
) -> LpSolution:
    """Solve to optimality; returns primal values, row duals, and a basis
    snapshot for warm starting the next solve."""
    if lp.n_rows == 0 or lp.n_cols == 0:
        raise LpError("empty program")
    tab = _Tableau(lp)
    engine = None
    if warm_start is not None:
        got = _basis_from_snapshot(lp, tab, warm_start)
        if got is not None:
            basic, state = got
            try:
                cand = _Engine(tab, basic, state)
                if cand.primal_infeasibility() <= FEAS_TOL * (
                    1.0 + np.abs(tab.b).sum()
                ):
                    engine = cand
            except LpNumericError:
                engine = None

    if engine is None:
        engine = _phase_one(tab, max_iter)
        if engine is None:
            return LpSolution(
                "infeasible", float("nan"),
                np.zeros(lp.n_cols), np.zeros(lp.n_rows),
            )

    cost = np.zeros(tab.a.shape[1])
    cost[: tab.n] = tab.cost[: tab.n]
    status = engine.iterate(cost, max_iter)
    nvars = lp.n_cols
    if status == "unbounded":
        return LpSolution(
            "unbounded", -INF, np.zeros(nvars), np.zeros(lp.n_rows)
        )
    x = np.empty(tab.a.shape[1])
    for j in range(tab.a.shape[1]):
        x[j] = _nonbasic_value(j, engine.state, tab.lo, tab.up)
    x[engine.basic] = engine.xb
    y = cost[engine.basic] @ engine.binv
    primal = x[:nvars].copy()
    objective = float(tab.cost[:nvars] @ primal)
    return LpSolution(
        "optimal",
        objective,
        primal,
        y[: lp.n_rows].copy(),
        _snapshot(lp, engine),
        engine.iterations,
    )


def _phase_one(tab: _Tableau, max_iter: int) -> Optional[_Engine]:
    """Feasible basis via artificials on violated rows (slack basis start).
    Returns None when infeasible."""
    m, n = tab.m, tab.n
    state = _default_state(tab.lo, tab.up)
    slacks = np.arange(n, n + m)
    nb_struct = np.arange(n)
    vals = np.array(
        [_nonbasic_value(j, state, tab.lo, tab.up) for j in nb_struct]
    )
    resid = tab.b - tab.a[:, :n] @ vals
    # residual outside the slack bounds needs an artificial carrier
    signs = np.ones(m)
    need_art = np.zeros(m, dtype=bool)
    basic = slacks.copy()
    for i in range(m):
        lo, up = tab.lo[n + i], tab.up[n + i]
        if resid[i] > up + FEAS_TOL:
            need_art[i] = True
            signs[i] = 1.0
        elif resid[i] < lo - FEAS_TOL:
            need_art[i] = True
            signs[i] = -1.0
    art = tab.add_artificials(signs)
    state = np.concatenate([state, np.full(m, _AT_LOWER, dtype=np.int8)])
    for i in range(m):
        if need_art[i]:
            basic[i] = art[i]
            # slack parks at the bound nearest its residual
            s = n + i
            if resid[i] > tab.up[s]:
                state[s] = (
                    _AT_UPPER if np.isfinite(tab.up[s]) else _AT_LOWER
                )
            else:
                state[s] = (
                    _AT_LOWER if np.isfinite(tab.lo[s]) else _AT_UPPER
                )
    engine = _Engine(tab, basic, state)
    cost1 = np.zeros(tab.a.shape[1])
    cost1[art] = 1.0
    status = engine.iterate(cost1, max_iter)
    if status != "optimal":
        raise LpNumericError("phase 1 did not terminate cleanly")
    obj1 = float(cost1[engine.basic] @ engine.xb)
    if obj1 > 1e-6:
        return None
    # pin artificials so phase 2 cannot move them
    tab.lo[art] = 0.0
    tab.up[art] = 0.0
    for j in art:
        if not engine.is_basic[j]:
            engine.state[j] = _AT_LOWER
    return engine


def write_lp_format(lp: LinearProgram, path: str) -> None:
    """Debug dump in the standard LP text format."""
    lines = ["Minimize", " obj:"]
    terms = [
        f" {'+' if c.cost >= 0 else '-'} {abs(c.cost):.12g} x{j}"
        for j, c in enumerate(lp.cols)
        if c.cost != 0
    ]
    lines[1] += "".join(terms) if terms else " 0 x0"
    lines.append("Subject To")
    rel_text = {"<=": "<=", ">=": ">=", "=": "="}
    by_row: Dict[int, List[str]] = {i: [] for i in range(lp.n_rows)}
    for j, c in enumerate(lp.cols):
        for r, coef in c.entries.items():
            by_row[r].append(
                f" {'+' if coef >= 0 else '-'} {abs(coef):.12g} x{j}"
            )
    for i, (rel, rhs) in enumerate(lp.rows):
        body = "".join(by_row[i]) or " 0 x0"
        lines.append(f" r{i}:{body} {rel_text[rel]} {rhs:.12g}")
    lines.append("Bounds")
    for j, c in enumerate(lp.cols):
        lo = "-inf" if np.isneginf(c.lower) else f"{c.lower:.12g}"
        up = "+inf" if np.isposinf(c.upper) else f"{c.upper:.12g}"
        lines.append(f" {lo} <= x{j} <= {up}")
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
