"""Weighted maximum agreement subtree: rooted/unrooted solvers and the
column-pricing oracle.

The dynamic program works on directed-edge handles (see
``phylo.rooted_subtrees``).  Two combine variants exist for the unrooted
problem:

* ``pinned`` (default): across every cut-edge pair the two sides contribute
  root-pinned values, so the combined score is exactly the weight of one
  connected block.  Singleton blocks are maximized separately.
* ``paper``: the literal rooted-value combine (floating score plus an
  optional non-negative root-path bonus per side).  Its optimum may describe
  the union of two disjoint blocks; results carry ``connected=False`` when
  that happens.  Kept for comparison, arbitrated by the brute-force oracle.

Pricing maximizes ``sum(alpha) - sum(beta) - epsilon * max(beta)`` over
agreement blocks by threshold enumeration over the distinct beta values,
with exact exclusion of forbidden blocks via best-first partitioning on
forced/banned taxa.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import phylo
from ._dpkernel import NEG_INF, combine_pinned, path_weights, run_dp
from .phylo import PhyloTree, RootedSubtree

VALUE_TOL = 1e-9
_IMPOSSIBLE_FLOOR = -1e200


class TreeIndex:
    """Flat-array view of one tree's handle table for the kernels."""

    def __init__(self, tree: PhyloTree, words: int):
        table = phylo.handle_table(tree)
        nh = len(table.pairs)
        nv = tree.n_vertices
        self.tree = tree
        self.table = table
        self.order = np.array(table.order, dtype=np.int32)
        self.sing = np.zeros(nh, dtype=np.bool_)
        self.tax = np.full(nh, -1, dtype=np.int32)
        self.child_a = np.full(nh, -1, dtype=np.int32)
        self.child_b = np.full(nh, -1, dtype=np.int32)
        self.rootv = np.zeros(nh, dtype=np.int32)
        self.opp = np.array(table.opposite, dtype=np.int32)
        self.leaf_mask = np.zeros((nh, words), dtype=np.uint64)
        self.vmask = np.zeros((nh, nv), dtype=np.bool_)
        self.taxv = np.arange(tree.n, dtype=np.int32)  # leaf vertex == taxon
        for h, (u, v) in enumerate(table.pairs):
            self.rootv[h] = v
            if tree.is_leaf(v):
                self.sing[h] = True
                self.tax[h] = v
            else:
                self.child_a[h], self.child_b[h] = table.children[h]
        for h in table.order:
            if self.sing[h]:
                t = self.tax[h]
                self.leaf_mask[h, t >> 6] = np.uint64(1) << np.uint64(t & 63)
                self.vmask[h, self.rootv[h]] = True
            else:
                ca, cb = self.child_a[h], self.child_b[h]
                self.leaf_mask[h] = self.leaf_mask[ca] | self.leaf_mask[cb]
                self.vmask[h] = self.vmask[ca] | self.vmask[cb]
                self.vmask[h, self.rootv[h]] = True
        self.n_handles = nh


class MatchContext:
    """Shared state for repeated DP runs on one tree pair."""

    def __init__(self, t1: PhyloTree, t2: PhyloTree):
        phylo.shared_taxa(t1, t2)
        self.t1 = t1
        self.t2 = t2
        self.n = t1.n
        self.words = (self.n + 63) // 64
        self.idx1 = TreeIndex(t1, self.words)
        self.idx2 = TreeIndex(t2, self.words)
        self._embed_cache: Dict[FrozenSet[int], Tuple[FrozenSet[int], FrozenSet[int]]] = {}

    def internals(self, block: FrozenSet[int]):
        """Embedding internal-vertex sets of a block in both trees."""
        got = self._embed_cache.get(block)
        if got is None:
            got = (
                phylo.embedding(self.t1, block).internal_vertices,
                phylo.embedding(self.t2, block).internal_vertices,
            )
            self._embed_cache[block] = got
        return got


@dataclass
class WeightAssignment:
    """Per-taxon leaf weights plus per-vertex internal weights for both
    trees (leaf slots of the internal arrays are ignored)."""

    leaf: np.ndarray
    internal1: np.ndarray
    internal2: np.ndarray

    @classmethod
    def uniform(cls, t1: PhyloTree, t2: PhyloTree, leaf=1.0, internal=0.0):
        return cls(
            np.full(t1.n, float(leaf)),
            np.full(t1.n_vertices, float(internal)),
            np.full(t2.n_vertices, float(internal)),
        )

    @classmethod
    def from_maps(cls, t1: PhyloTree, t2: PhyloTree, leaf_map, internal_map):
        """``leaf_map``: taxon id -> weight. ``internal_map``: (tree tag in
        {1, 2}, vertex id) -> weight.  Every leaf and internal vertex must
        be covered exactly once."""
        if set(leaf_map) != set(range(t1.n)):
            raise ValueError("leaf weights must cover every taxon exactly")
        want = {(1, v) for v in t1.internal_vertices()} | {
            (2, v) for v in t2.internal_vertices()
        }
        if set(internal_map) != want:
            raise ValueError(
                "internal weights must cover every internal vertex of both "
                "trees exactly"
            )
        w = cls(
            np.zeros(t1.n),
            np.zeros(t1.n_vertices),
            np.zeros(t2.n_vertices),
        )
        for t, x in leaf_map.items():
            w.leaf[t] = x
        for (tag, v), x in internal_map.items():
            (w.internal1 if tag == 1 else w.internal2)[v] = x
        return w

    def block_value(self, ctx: MatchContext, block: FrozenSet[int]) -> float:
        """Recompute a connected block's objective from its embeddings."""
        in1, in2 = ctx.internals(block)
        return (
            float(sum(self.leaf[t] for t in block))
            + float(sum(self.internal1[v] for v in in1))
            + float(sum(self.internal2[v] for v in in2))
        )


@dataclass
class DpTables:
    """Value tables over handle pairs plus traceback choices."""

    v: np.ndarray
    m: np.ndarray
    w: np.ndarray
    choice_v: np.ndarray
    choice_m: np.ndarray
    attach1: np.ndarray
    attach2: np.ndarray
    ctx: MatchContext


@dataclass
class WmastResult:
    value: float
    block: FrozenSet[int]
    connected: bool


def _req_words(ctx: MatchContext, required: Optional[Iterable[int]]):
    reqw = np.zeros(ctx.words, dtype=np.uint64)
    if not required:
        return False, reqw
    for t in required:
        reqw[t >> 6] |= np.uint64(1) << np.uint64(t & 63)
    return True, reqw


def dp_tables(
    ctx: MatchContext,
    weights: WeightAssignment,
    required: Optional[Iterable[int]] = None,
) -> DpTables:
    """Run the full DP; every handle pair is defined afterwards."""
    has_req, reqw = _req_words(ctx, required)
    i1, i2 = ctx.idx1, ctx.idx2
    v, m, w, cv, cm, a1, a2 = run_dp(
        i1.order, i1.sing, i1.tax, i1.child_a, i1.child_b, i1.rootv,
        i1.leaf_mask, i1.taxv,
        i2.order, i2.sing, i2.tax, i2.child_a, i2.child_b, i2.rootv,
        i2.leaf_mask, i2.taxv,
        np.ascontiguousarray(weights.leaf, dtype=np.float64),
        np.ascontiguousarray(weights.internal1, dtype=np.float64),
        np.ascontiguousarray(weights.internal2, dtype=np.float64),
        has_req, reqw,
    )
    return DpTables(v, m, w, cv, cm, a1, a2, ctx)


def _walk_block(tables: DpTables, i1: int, i2: int, kind: str) -> FrozenSet[int]:
    """Recover the witness leaf set behind a table entry."""
    idx1, idx2 = tables.ctx.idx1, tables.ctx.idx2
    codes = tables.choice_v if kind == "v" else tables.choice_m
    out = set()
    stack = [(i1, i2, kind)]
    while stack:
        a, b, k = stack.pop()
        code = (tables.choice_v if k == "v" else tables.choice_m)[a, b]
        if code == 0 or code == 8:
            continue
        if code == 1:
            out.add(int(idx1.tax[a]) if idx1.sing[a] else int(idx2.tax[b]))
        elif code == 2:
            stack.append((idx1.child_a[a], idx2.child_a[b], "v"))
            stack.append((idx1.child_b[a], idx2.child_b[b], "v"))
        elif code == 3:
            stack.append((idx1.child_a[a], idx2.child_b[b], "v"))
            stack.append((idx1.child_b[a], idx2.child_a[b], "v"))
        elif code == 4:
            stack.append((idx1.child_a[a], b, k))
        elif code == 5:
            stack.append((idx1.child_b[a], b, k))
        elif code == 6:
            stack.append((a, idx2.child_a[b], k))
        elif code == 7:
            stack.append((a, idx2.child_b[b], k))
    return frozenset(out)


def _path_weights(idx: TreeIndex, wv: np.ndarray) -> np.ndarray:
    return path_weights(
        idx.order, idx.sing, idx.child_a, idx.child_b, idx.rootv,
        idx.vmask, np.ascontiguousarray(wv, dtype=np.float64),
    )


def rwmast(
    h1: RootedSubtree,
    h2: RootedSubtree,
    weights: WeightAssignment,
    ctx: Optional[MatchContext] = None,
) -> WmastResult:
    """Rooted value at a handle pair: floating optimum plus the optional
    non-negative weight of the paths from both roots down to it."""
    if ctx is None:
        ctx = MatchContext(h1.tree, h2.tree)
    if h1.tree is not ctx.t1 or h2.tree is not ctx.t2:
        raise phylo.PhyloError("handles do not reference the context trees")
    tables = dp_tables(ctx, weights)
    i1, i2 = h1.index, h2.index
    base = float(tables.m[i1, i2])
    a1 = int(tables.attach1[i1, i2])
    a2 = int(tables.attach2[i1, i2])
    bonus = 0.0
    if a1 >= 0:
        pw1 = _path_weights(ctx.idx1, weights.internal1)
        pw2 = _path_weights(ctx.idx2, weights.internal2)
        bonus = max(0.0, float(pw1[i1, a1] + pw2[i2, a2]))
    block = _walk_block(tables, i1, i2, "m")
    return WmastResult(base + bonus, block, True)


def _paper_slot_values(ctx, tables, weights):
    """Per-cell literal rooted values m + max(0, root paths)."""
    pw1 = _path_weights(ctx.idx1, weights.internal1)
    pw2 = _path_weights(ctx.idx2, weights.internal2)
    h_ix = np.arange(ctx.idx1.n_handles)[:, None]
    g_ix = np.arange(ctx.idx2.n_handles)[None, :]
    a1 = np.clip(tables.attach1, 0, None)
    a2 = np.clip(tables.attach2, 0, None)
    bonus = pw1[h_ix, a1] + pw2[g_ix, a2]
    bonus = np.where(tables.attach1 >= 0, np.maximum(bonus, 0.0), 0.0)
    return tables.m + bonus


def _combine(ctx, tables, weights, variant, has_req=False, reqw=None):
    if reqw is None:
        reqw = np.zeros(ctx.words, dtype=np.uint64)
    if variant == "pinned":
        return combine_pinned(
            tables.v, ctx.idx1.opp, ctx.idx2.opp,
            ctx.idx1.leaf_mask, ctx.idx2.leaf_mask, has_req, reqw,
        )
    r = _paper_slot_values(ctx, tables, weights)
    return r + r[ctx.idx1.opp][:, ctx.idx2.opp]


def wmast(
    t1: PhyloTree,
    t2: PhyloTree,
    weights: WeightAssignment,
    variant: str = "pinned",
    ctx: Optional[MatchContext] = None,
) -> WmastResult:
    """Maximum weighted agreement block over the whole tree pair."""
    if ctx is None:
        ctx = MatchContext(t1, t2)
    tables = dp_tables(ctx, weights)
    comb = _combine(ctx, tables, weights, variant)
    flat = int(np.argmax(comb))
    h, g = divmod(flat, comb.shape[1])
    slot_val = float(comb[h, g])

    singles = np.asarray(weights.leaf, dtype=float)
    best_single = int(np.argmax(singles))
    single_val = float(singles[best_single])

    if slot_val >= single_val and slot_val > _IMPOSSIBLE_FLOOR:
        kind = "v" if variant == "pinned" else "m"
        side_a = _walk_block(tables, h, g, kind)
        side_b = _walk_block(
            tables, int(ctx.idx1.opp[h]), int(ctx.idx2.opp[g]), kind
        )
        block = side_a | side_b
        if variant == "pinned":
            check = weights.block_value(ctx, block)
            assert abs(check - slot_val) <= VALUE_TOL * max(1, abs(check)), (
                "pinned combine does not match its witness value"
            )
            return WmastResult(slot_val, block, True)
        connected = bool(block) and phylo.is_agreement_block(t1, t2, block) \
            and abs(weights.block_value(ctx, block) - slot_val) <= 1e-6
        return WmastResult(slot_val, block, connected)
    return WmastResult(single_val, frozenset({best_single}), True)


# ---------------------------------------------------------------------------
# Pricing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PricedBlock:
    """One pricing candidate: a connected agreement block with its exact
    perturbed score, recomputed from embeddings."""

    block: FrozenSet[int]
    canon: str
    score: float  # sum(alpha) - sum(beta) - epsilon * max(beta)
    raw: float  # sum(alpha) - sum(beta)
    beta_max: float
    internal1: FrozenSet[int]
    internal2: FrozenSet[int]


@dataclass(order=True)
class _PatternNode:
    neg_value: float
    seq: int
    required: FrozenSet[int] = field(compare=False)
    excluded: FrozenSet[int] = field(compare=False)
    block: FrozenSet[int] = field(compare=False)


def _score_block(ctx, alpha, beta1, beta2, epsilon, block):
    in1, in2 = ctx.internals(block)
    raw = float(sum(alpha[t] for t in block))
    raw -= float(sum(beta1[v] for v in in1))
    raw -= float(sum(beta2[v] for v in in2))
    bmax = 0.0
    for v in in1:
        bmax = max(bmax, float(beta1[v]))
    for v in in2:
        bmax = max(bmax, float(beta2[v]))
    return raw, bmax, raw - epsilon * bmax


def _threshold_best(ctx, alpha, wv1, wv2, required, excluded):
    """Exact maximizer of the pinned objective under forced-in /
    forced-out taxa at one beta threshold.  Returns (value, block) with
    block empty when the pattern is infeasible."""
    wleaf = np.array(alpha, dtype=float)
    for t in excluded:
        wleaf[t] = NEG_INF
    weights = WeightAssignment(wleaf, wv1, wv2)
    has_req, reqw = _req_words(ctx, required)
    tables = dp_tables(ctx, weights, required)
    comb = _combine(ctx, tables, weights, "pinned", has_req, reqw)
    flat = int(np.argmax(comb))
    h, g = divmod(flat, comb.shape[1])
    best_val = float(comb[h, g])
    best_block: FrozenSet[int] = frozenset()
    if best_val > _IMPOSSIBLE_FLOOR:
        block = _walk_block(tables, h, g, "v") | _walk_block(
            tables, int(ctx.idx1.opp[h]), int(ctx.idx2.opp[g]), "v"
        )
        best_block = block
    # singleton blocks
    req_list = list(required)
    if len(req_list) <= 1:
        for x in (req_list or range(ctx.n)):
            if x in excluded:
                continue
            if wleaf[x] > best_val:
                best_val = float(wleaf[x])
                best_block = frozenset({int(x)})
    if not best_block:
        return NEG_INF, best_block
    if not (required <= best_block) or (best_block & excluded):
        # no witness satisfying the pattern exists
        return NEG_INF, frozenset()
    return best_val, best_block


def _harvest_slots(ctx, tables, comb, limit):
    """Distinct witness blocks from the highest-value cut slots."""
    flat = comb.ravel()
    k = min(limit, flat.size)
    top = np.argpartition(-flat, k - 1)[:k] if k < flat.size else np.arange(flat.size)
    top = top[np.argsort(-flat[top], kind="stable")]
    blocks = []
    seen = set()
    for f in top:
        if flat[f] <= _IMPOSSIBLE_FLOOR:
            break
        h, g = divmod(int(f), comb.shape[1])
        block = _walk_block(tables, h, g, "v") | _walk_block(
            tables, int(ctx.idx1.opp[h]), int(ctx.idx2.opp[g]), "v"
        )
        if block and block not in seen:
            seen.add(block)
            blocks.append(block)
    return blocks


def price(
    t1: PhyloTree,
    t2: PhyloTree,
    duals,
    epsilon: float,
    forbidden: Iterable[FrozenSet[int]] = (),
    max_candidates: int = 10,
    ctx: Optional[MatchContext] = None,
    variant: str = "pinned",
) -> List[PricedBlock]:
    """Best-first agreement blocks under the perturbed pricing objective.

    The first candidate is the exact maximizer over all agreement blocks
    outside ``forbidden``; runners-up are distinct well-scored blocks.
    Every candidate is validated (agreement + score recomputation).
    ``duals`` needs attributes ``alpha`` (per taxon), ``beta1``/``beta2``
    (per vertex, internal slots meaningful).
    """
    if ctx is None:
        ctx = MatchContext(t1, t2)
    alpha = np.maximum(np.asarray(duals.alpha, dtype=float), 0.0)
    beta1 = np.maximum(np.asarray(duals.beta1, dtype=float), 0.0)
    beta2 = np.maximum(np.asarray(duals.beta2, dtype=float), 0.0)
    epsilon = float(epsilon)
    forbidden = {frozenset(b) for b in forbidden}

    betas = np.concatenate(
        [beta1[list(t1.internal_vertices())], beta2[list(t2.internal_vertices())]]
    )
    if epsilon == 0.0:
        thresholds = [float(betas.max()) if betas.size else 0.0]
    else:
        thresholds = sorted({0.0} | {float(b) for b in betas})

    candidates: Dict[FrozenSet[int], float] = {}
    best_block: Optional[FrozenSet[int]] = None
    best_score = NEG_INF

    def consider(block: FrozenSet[int]):
        nonlocal best_block, best_score
        if not block or block in forbidden or block in candidates:
            return
        if not phylo.is_agreement_block(t1, t2, block):
            return
        _, _, score = _score_block(ctx, alpha, beta1, beta2, epsilon, block)
        candidates[block] = score
        if score > best_score:
            best_score, best_block = score, block

    for thr in thresholds:
        wv1 = np.where(beta1 <= thr + 1e-12, -beta1, NEG_INF)
        wv2 = np.where(beta2 <= thr + 1e-12, -beta2, NEG_INF)
        if variant == "paper":
            # literal combine for comparison runs: may yield a disconnected
            # union; fall back to its connected pieces as candidates
            weights = WeightAssignment(np.array(alpha), wv1, wv2)
            tables = dp_tables(ctx, weights)
            comb = _combine(ctx, tables, weights, "paper")
            flat = int(np.argmax(comb))
            h, g = divmod(flat, comb.shape[1])
            for side in (
                _walk_block(tables, h, g, "m"),
                _walk_block(tables, int(ctx.idx1.opp[h]), int(ctx.idx2.opp[g]), "m"),
            ):
                consider(side)
            union = _walk_block(tables, h, g, "m") | _walk_block(
                tables, int(ctx.idx1.opp[h]), int(ctx.idx2.opp[g]), "m"
            )
            consider(union)
            for x in range(ctx.n):
                consider(frozenset({x}))
            continue

        weights = WeightAssignment(np.array(alpha), wv1, wv2)
        tables = dp_tables(ctx, weights)
        comb = _combine(ctx, tables, weights, "pinned")
        flat = int(np.argmax(comb))
        h, g = divmod(flat, comb.shape[1])
        value = float(comb[h, g])
        block: FrozenSet[int] = frozenset()
        if value > _IMPOSSIBLE_FLOOR:
            block = _walk_block(tables, h, g, "v") | _walk_block(
                tables, int(ctx.idx1.opp[h]), int(ctx.idx2.opp[g]), "v"
            )
        for x in range(ctx.n):
            if alpha[x] > value:
                value, block = float(alpha[x]), frozenset({int(x)})
        if block and block in forbidden:
            # exact exclusion: best-first partition on forced/banned taxa
            heap: List[_PatternNode] = []
            seq = 0
            heapq.heappush(
                heap, _PatternNode(-value, seq, frozenset(), frozenset(), block)
            )
            while heap:
                node = heapq.heappop(heap)
                if node.block not in forbidden:
                    consider(node.block)
                    break
                free = sorted(
                    set(range(ctx.n)) - node.required - node.excluded
                )
                inc, exc = set(node.required), set(node.excluded)
                for x in free:
                    if x in node.block:
                        child_req = frozenset(inc)
                        child_exc = frozenset(exc | {x})
                    else:
                        child_req = frozenset(inc | {x})
                        child_exc = frozenset(exc)
                    val, blk = _threshold_best(
                        ctx, alpha, wv1, wv2, child_req, child_exc
                    )
                    if blk:
                        seq += 1
                        heapq.heappush(
                            heap,
                            _PatternNode(-val, seq, child_req, child_exc, blk),
                        )
                    # keep the child patterns disjoint
                    if x in node.block:
                        inc.add(x)
                    else:
                        exc.add(x)
        else:
            consider(block)
        # runner-up harvest from this threshold's slot values
        for blk in _harvest_slots(ctx, tables, comb, 4 * max_candidates):
            consider(blk)
        for x in range(ctx.n):
            consider(frozenset({x}))

    out = []
    for block, score in candidates.items():
        raw, bmax, score2 = _score_block(ctx, alpha, beta1, beta2, epsilon, block)
        in1, in2 = ctx.internals(block)
        out.append(
            PricedBlock(
                block, phylo.restrict(t1, block), score2, raw, bmax, in1, in2
            )
        )
    out.sort(key=lambda c: (-c.score, c.canon))
    return out[:max_candidates]
