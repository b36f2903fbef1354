"""Branch-&-price driver for the unrooted maximum agreement forest.

Master problem (set cover + internal-vertex packing, minimization):

    min  sum a_Y + sum b_x
    s.t. sum_{Y holding x} a_Y + b_x            >= 1      per taxon x
         sum_{Y using v} (a_Y + c_{v,Y})        <= 1      per internal v
         sum_{v in V[Y]} c_{v,Y}                <= eps    per block column

``b_x`` is free and duplicates the singleton block {x}; because it is free,
the cover duals (alpha) are pinned to 1.  The ``c`` auxiliaries implement
the epsilon perturbation that smooths the packing duals (beta) between
degenerate optima.  Pricing looks for blocks with
``sum(alpha) - sum(beta) - eps*max(beta) > 1``; after that converges, one
unperturbed sweep (eps = 0) certifies true dual feasibility so the node
bound is exact before pruning or declaring optimality.

Search is depth-first, fix-to-one child first.  Branching fixes a
fractional block column to 1, or to 0 while adding its block to the
forbidden set that pricing excludes exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from . import lpcore, phylo, wmast
from .oracle import forest_is_valid
from .phylo import PhyloError, PhyloTree
from .wmast import MatchContext, PricedBlock

INT_TOL = 1e-6
VIOLATION_TOL = 1e-6


class SolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float = 1e-3
    strategy: str = "ratio"  # "ratio" | "size"
    time_limit: float = 300.0
    variant: str = "pinned"  # pricing combine variant
    max_candidates: int = 10


@dataclass
class DualValues:
    """Cover duals per taxon and packing duals per internal vertex of each
    tree (leaf slots are zero)."""

    alpha: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    epsilon: float


@dataclass(frozen=True)
class Column:
    block: FrozenSet[int]
    canon: str
    internal1: FrozenSet[int]
    internal2: FrozenSet[int]
    var: int  # lp column id of a_Y


@dataclass(frozen=True)
class BnpNode:
    fixed_one: Tuple[FrozenSet[int], ...] = ()
    forbidden: Tuple[FrozenSet[int], ...] = ()
    depth: int = 0
    basis: Optional[lpcore.Basis] = None


@dataclass(frozen=True)
class AgreementForest:
    """Partition of the taxa into agreement blocks with vertex-disjoint
    embeddings in both trees."""

    blocks: Tuple[FrozenSet[int], ...]

    @property
    def size(self) -> int:
        return len(self.blocks)

    def labelled(self, taxa) -> List[List[str]]:
        out = [sorted(taxa.label_of(t) for t in b) for b in self.blocks]
        return sorted(out, key=lambda b: b[0])


@dataclass
class SolveStats:
    maf_size: int = 0
    columns_generated: int = 0
    branch_nodes: int = 0
    nodes_explored: int = 0
    cg_rounds: int = 0
    lp_time: float = 0.0
    pricing_time: float = 0.0
    total_time: float = 0.0
    optimal: bool = True
    root_lp_value: float = 0.0
    root_duals: Optional[DualValues] = None
    epsilon: float = 0.0
    strategy: str = "ratio"


@dataclass
class RoundResult:
    added: int
    lp_value: float
    duals: DualValues


class RestrictedMaster:
    """Master LP over the generated block columns plus the singleton
    encodings b_x; owns the tree pair and the pricing context."""

    def __init__(self, t1: PhyloTree, t2: PhyloTree, epsilon: float):
        phylo.shared_taxa(t1, t2)
        if t1.n < 3:
            raise PhyloError("solver needs at least 3 taxa")
        self.t1 = t1
        self.t2 = t2
        self.epsilon = float(epsilon)
        self.ctx = MatchContext(t1, t2)
        self.lp = lpcore.LinearProgram()
        n = t1.n
        self.cover_rows = [self.lp.add_row(">=", 1.0) for _ in range(n)]
        self.pack1 = {
            v: self.lp.add_row("<=", 1.0) for v in t1.internal_vertices()
        }
        self.pack2 = {
            v: self.lp.add_row("<=", 1.0) for v in t2.internal_vertices()
        }
        self.b_vars = [
            self.lp.add_column(
                1.0, {self.cover_rows[x]: 1.0}, -lpcore.INF, lpcore.INF
            )
            for x in range(n)
        ]
        self.columns: List[Column] = []
        self.by_block: Dict[FrozenSet[int], Column] = {}
        self.last: Optional[lpcore.LpSolution] = None

    def add_block(self, cand: PricedBlock) -> Column:
        if len(cand.block) < 2:
            raise SolveError("singleton blocks are encoded by b_x")
        entries = {self.cover_rows[x]: 1.0 for x in cand.block}
        for v in cand.internal1:
            entries[self.pack1[v]] = 1.0
        for v in cand.internal2:
            entries[self.pack2[v]] = 1.0
        # packing rows cap every multi-leaf column at 1; no upper bound
        var = self.lp.add_column(1.0, entries, 0.0, lpcore.INF)
        # the auxiliaries relax each packing row by at most eps in total per
        # column; their duals realize the m_Y >= beta_v constraints that put
        # the -eps*max(beta) term into the pricing objective
        eps_row = self.lp.add_row("<=", self.epsilon)
        for v in cand.internal1:
            self.lp.add_column(0.0, {self.pack1[v]: -1.0, eps_row: 1.0})
        for v in cand.internal2:
            self.lp.add_column(0.0, {self.pack2[v]: -1.0, eps_row: 1.0})
        col = Column(
            cand.block, cand.canon, cand.internal1, cand.internal2, var
        )
        self.columns.append(col)
        self.by_block[col.block] = col
        return col

    def apply_node(self, node: BnpNode) -> None:
        fixed = set(node.fixed_one)
        banned = set(node.forbidden)
        for col in self.columns:
            if col.block in fixed:
                self.lp.set_bounds(col.var, 1.0, lpcore.INF)
            elif col.block in banned:
                self.lp.set_bounds(col.var, 0.0, 0.0)
            else:
                self.lp.set_bounds(col.var, 0.0, lpcore.INF)

    def solve_lp(
        self, warm: Optional[lpcore.Basis], allow_infeasible: bool = False
    ) -> lpcore.LpSolution:
        sol = lpcore.solve(self.lp, warm_start=warm)
        if sol.status != "optimal" and not (
            allow_infeasible and sol.status == "infeasible"
        ):
            raise SolveError(f"master LP came back {sol.status}")
        self.last = sol if sol.status == "optimal" else None
        return sol

    def duals(self, sol: lpcore.LpSolution) -> DualValues:
        n = self.t1.n
        alpha = np.array([sol.dual[self.cover_rows[x]] for x in range(n)])
        beta1 = np.zeros(self.t1.n_vertices)
        beta2 = np.zeros(self.t2.n_vertices)
        for v, r in self.pack1.items():
            beta1[v] = max(0.0, -sol.dual[r])
        for v, r in self.pack2.items():
            beta2[v] = max(0.0, -sol.dual[r])
        if np.abs(alpha - 1.0).max() > 1e-5:
            raise SolveError("cover duals drifted away from 1")
        return DualValues(alpha, beta1, beta2, self.epsilon)


def initialize(t1: PhyloTree, t2: PhyloTree, epsilon: float) -> RestrictedMaster:
    """Restricted master holding only the singleton encodings; its LP value
    is the number of taxa."""
    return RestrictedMaster(t1, t2, epsilon)


def column_generation_round(
    master: RestrictedMaster,
    node: BnpNode,
    config: SolveConfig = SolveConfig(),
    epsilon_override: Optional[float] = None,
    stats: Optional[SolveStats] = None,
) -> RoundResult:
    """One pricing round at a solved master: add every candidate whose
    perturbed score exceeds 1, re-solve if anything was added."""
    sol = master.last
    if sol is None:
        raise SolveError("master must be solved before pricing")
    duals = master.duals(sol)
    eps = master.epsilon if epsilon_override is None else epsilon_override
    excluded = set(node.forbidden) | set(node.fixed_one)
    tic = time.perf_counter()
    cands = wmast.price(
        master.t1,
        master.t2,
        duals,
        eps,
        forbidden=excluded,
        max_candidates=config.max_candidates,
        ctx=master.ctx,
        variant=config.variant,
    )
    if stats is not None:
        stats.pricing_time += time.perf_counter() - tic
    added = 0
    used1: set = set()
    used2: set = set()
    for cand in cands:
        if cand.score <= 1.0 + VIOLATION_TOL or len(cand.block) < 2:
            continue
        if cand.block in master.by_block:
            continue
        if added and (used1 & cand.internal1 or used2 & cand.internal2):
            # keep each round's additions simultaneously packable; the
            # best violator always goes in
            continue
        master.add_block(cand)
        used1 |= cand.internal1
        used2 |= cand.internal2
        added += 1
    lp_value = sol.objective
    if added:
        tic = time.perf_counter()
        lp_value = master.solve_lp(sol.basis).objective
        if stats is not None:
            stats.lp_time += time.perf_counter() - tic
    if stats is not None:
        stats.cg_rounds += 1
    return RoundResult(added, lp_value, duals)


def _converge_node(master, node, config, stats, deadline) -> Optional[DualValues]:
    """Run pricing rounds to dual feasibility, then certify with one
    unperturbed sweep; returns the certifying duals (None on timeout)."""
    while True:
        while True:
            if time.perf_counter() > deadline:
                return None
            rr = column_generation_round(master, node, config, stats=stats)
            if rr.added == 0:
                break
        if master.epsilon == 0.0:
            return rr.duals
        rr = column_generation_round(
            master, node, config, epsilon_override=0.0, stats=stats
        )
        if rr.added == 0:
            return rr.duals


def _solution_values(master) -> Tuple[np.ndarray, np.ndarray]:
    sol = master.last
    a = np.array([sol.primal[c.var] for c in master.columns])
    b = np.array([sol.primal[j] for j in master.b_vars])
    return a, b


def _int_tol(epsilon: float) -> float:
    # the master's eps-auxiliaries shift an integral vertex by up to eps per
    # variable, so integrality detection must absorb that on top of LP noise
    return INT_TOL + epsilon


def _rounded_forest(master: RestrictedMaster) -> Optional[AgreementForest]:
    """Round the LP solution to blocks; None unless the rounding is a valid
    agreement forest."""
    a, b = _solution_values(master)
    blocks = [c.block for c, v in zip(master.columns, a) if v > 0.5]
    blocks += [frozenset({x}) for x, v in enumerate(b) if v > 0.5]
    if not forest_is_valid(master.t1, master.t2, blocks):
        return None
    ordered = tuple(sorted(blocks, key=lambda blk: sorted(blk)))
    return AgreementForest(ordered)


def select_branch_column(
    master: RestrictedMaster, strategy: str = "ratio"
) -> Column:
    """Fractional column maximizing the selection criterion: leafset size,
    or leafset size over total internal-vertex count."""
    a, _ = _solution_values(master)
    tol = _int_tol(master.epsilon)
    cands = [
        c
        for c, val in zip(master.columns, a)
        if tol < val < 1.0 - tol
    ]
    if not cands:
        raise SolveError("no fractional column to branch on")
    # prefer columns clear of the eps-perturbation noise band
    floor = 10.0 * master.epsilon + INT_TOL
    solid = [
        c
        for c, val in zip(master.columns, a)
        if floor < val < 1.0 - floor
    ]
    if solid:
        cands = solid
    if strategy == "size":
        score = lambda c: float(len(c.block))  # noqa: E731
    elif strategy == "ratio":
        score = lambda c: len(c.block) / (  # noqa: E731
            len(c.internal1) + len(c.internal2)
        )
    else:
        raise SolveError(f"unknown branching strategy {strategy!r}")
    best = max(score(c) for c in cands)
    tied = [c for c in cands if score(c) == best]
    return min(tied, key=lambda c: c.canon)


def branch(node: BnpNode, column: Column) -> Tuple[BnpNode, BnpNode]:
    """Children fixing the column to one / to zero; explore the one-child
    first (depth-first)."""
    child_one = BnpNode(
        node.fixed_one + (column.block,),
        node.forbidden,
        node.depth + 1,
        node.basis,
    )
    child_zero = BnpNode(
        node.fixed_one,
        node.forbidden + (column.block,),
        node.depth + 1,
        node.basis,
    )
    return child_one, child_zero


def extract_forest(master: RestrictedMaster) -> AgreementForest:
    """Blocks at one in the integral solution, plus the singleton
    encodings; validated against all agreement-forest conditions."""
    forest = _rounded_forest(master)
    if forest is None:
        raise SolveError("integral solution failed forest validation")
    return forest


def _singleton_forest(n: int) -> AgreementForest:
    return AgreementForest(tuple(frozenset({x}) for x in range(n)))


def solve(
    t1: PhyloTree,
    t2: PhyloTree,
    config: SolveConfig = SolveConfig(),
) -> Tuple[AgreementForest, SolveStats]:
    """Provably optimal agreement forest by depth-first branch-&-price.

    On hitting the time limit the best incumbent is returned with
    ``stats.optimal = False``.
    """
    start = time.perf_counter()
    deadline = start + config.time_limit
    stats = SolveStats(epsilon=config.epsilon, strategy=config.strategy)
    master = initialize(t1, t2, config.epsilon)
    tic = time.perf_counter()
    master.solve_lp(None)
    stats.lp_time += time.perf_counter() - tic

    incumbent: Optional[AgreementForest] = None
    stack: List[BnpNode] = [BnpNode()]
    timed_out = False

    while stack:
        node = stack.pop()
        if time.perf_counter() > deadline:
            timed_out = True
            break
        stats.nodes_explored += 1
        master.apply_node(node)
        tic = time.perf_counter()
        warm = node.basis or (master.last.basis if master.last else None)
        sol = master.solve_lp(warm, allow_infeasible=True)
        stats.lp_time += time.perf_counter() - tic
        if sol.status == "infeasible":
            continue  # contradictory fixings; the subtree holds no forest
        duals = _converge_node(master, node, config, stats, deadline)
        if duals is None:
            timed_out = True
            break
        sol = master.last
        lp_value = sol.objective
        if node.depth == 0:
            stats.root_lp_value = lp_value
            stats.root_duals = duals
        bound = math.ceil(lp_value - INT_TOL)
        if incumbent is not None and bound >= incumbent.size:
            continue
        forest = _rounded_forest(master)
        if forest is not None and (
            incumbent is None or forest.size < incumbent.size
        ):
            incumbent = forest
        if forest is not None and forest.size <= bound:
            continue  # the node's bound is met; nothing better below
        column = select_branch_column(master, config.strategy)
        stats.branch_nodes += 1
        child_one, child_zero = branch(
            replace(node, basis=sol.basis), column
        )
        stack.append(child_zero)
        stack.append(child_one)

    stats.columns_generated = len(master.columns)
    stats.optimal = not timed_out
    if incumbent is None:
        incumbent = _singleton_forest(t1.n)
        stats.optimal = False
    stats.maf_size = incumbent.size
    stats.total_time = time.perf_counter() - start
    return incumbent, stats
