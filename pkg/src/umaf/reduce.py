"""Polynomial-time preprocessing: common pendant subtree and common chain
reductions, with exact back-translation of a solved forest.

* subtree rule: a maximal pendant subtree occurring in both trees (same
  leaf set, same rooted shape) is replaced by one fresh leaf.
* chain rule: a common chain (pendant leaves attached consecutively, in
  the same order, along a path of both trees) longer than 3 is truncated
  to its first 3 leaves.

Both rules preserve the optimal forest size.  ``lift_forest`` undoes the
steps in reverse, re-validating the forest at every level; when a chain's
representatives end up separated from their tail, the lift re-routes by
cutting the blocks that occupy the chain's attachment path along edges of
their own restricted topology (which keeps every piece a valid block).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from . import phylo
from .oracle import forest_is_valid
from .phylo import PhyloError, PhyloTree, TaxonSet


class LiftError(RuntimeError):
    """The lifted forest failed validation; indicates a solver or
    reduction bug."""


@dataclass(frozen=True)
class ReductionStep:
    kind: str  # "subtree" | "chain"
    replaced: Tuple[str, ...]  # labels, ordered (chain order matters)
    replacement: Tuple[str, ...]


@dataclass(frozen=True)
class ReductionTrace:
    steps: Tuple[ReductionStep, ...]

    def __len__(self):
        return len(self.steps)


# ---------------------------------------------------------------------------
# tree surgery (label-level, deterministic)
# ---------------------------------------------------------------------------


def _adj_map(tree: PhyloTree) -> Dict[int, List[int]]:
    return {v: list(tree.adj[v]) for v in range(tree.n_vertices)}


def _rebuild(tree: PhyloTree, adj: Dict[int, List[int]]) -> PhyloTree:
    labels = {
        v: tree.taxa.label_of(v)
        for v in adj
        if v < tree.n and len(adj[v]) == 1
    }
    edges = [(u, v) for u in adj for v in adj[u] if u < v]
    taxa = TaxonSet(sorted(labels.values()))
    return PhyloTree.from_edges(taxa, edges, labels)


def _splice_degree2(adj: Dict[int, List[int]], v: int) -> None:
    a, b = adj[v]
    adj[a] = [x if x != v else b for x in adj[a]]
    adj[b] = [x if x != v else a for x in adj[b]]
    del adj[v]


def _drop_leaves(tree: PhyloTree, labels: Sequence[str]) -> PhyloTree:
    adj = _adj_map(tree)
    for lab in labels:
        x = tree.taxa.id_of(lab)
        (u,) = adj[x]
        adj[u].remove(x)
        del adj[x]
        if len(adj[u]) == 2:
            _splice_degree2(adj, u)
    return _rebuild(tree, adj)


def _replace_pendant(
    tree: PhyloTree, block_labels: FrozenSet[str], fresh: str
) -> PhyloTree:
    """Replace the pendant subtree with exactly this leaf set by a fresh
    leaf attached at the same spot."""
    ids = frozenset(tree.taxa.id_of(lab) for lab in block_labels)
    table = phylo.handle_table(tree)
    handle = None
    for h, ls in enumerate(table.leaf_sets):
        if ls == ids:
            handle = h
            break
    if handle is None:
        raise PhyloError("no pendant subtree with the requested leaf set")
    u, v = table.pairs[handle]
    adj = _adj_map(tree)
    # remove the component containing v
    doomed = {v}
    stack = [v]
    while stack:
        x = stack.pop()
        for w in adj[x]:
            if w != u and w not in doomed:
                doomed.add(w)
                stack.append(w)
    for x in doomed:
        del adj[x]
    adj[u] = [x for x in adj[u] if x not in doomed]
    fresh_vertex = tree.n_vertices  # unused key
    adj[fresh_vertex] = [u]
    adj[u].append(fresh_vertex)
    labels = {
        x: tree.taxa.label_of(x)
        for x in adj
        if x < tree.n and len(adj[x]) == 1
    }
    labels[fresh_vertex] = fresh
    edges = [(a, b) for a in adj for b in adj[a] if a < b]
    taxa = TaxonSet(sorted(labels.values()))
    return PhyloTree.from_edges(taxa, edges, labels)


# ---------------------------------------------------------------------------
# rule detection
# ---------------------------------------------------------------------------


def _rooted_shapes(tree: PhyloTree) -> Dict[FrozenSet[str], str]:
    """Pendant leaf-label set -> rooted canonical shape, for every handle
    with 2 <= |leaves| <= n - 2."""
    table = phylo.handle_table(tree)
    shapes: Dict[int, Tuple[str, str]] = {}
    out: Dict[FrozenSet[str], str] = {}
    for h in table.order:
        u, v = table.pairs[h]
        if tree.is_leaf(v):
            lab = tree.taxa.label_of(v)
            shapes[h] = (lab, lab)
            continue
        ca, cb = table.children[h]
        parts = sorted([shapes[ca], shapes[cb]], key=lambda sm: sm[1])
        text = "(" + parts[0][0] + "," + parts[1][0] + ")"
        shapes[h] = (text, parts[0][1])
        count = table.leaf_count[h]
        if 2 <= count <= tree.n - 2:
            labels = frozenset(
                tree.taxa.label_of(t) for t in table.leaf_sets[h]
            )
            out[labels] = text
    return out


def _find_common_pendant(t1: PhyloTree, t2: PhyloTree):
    s1 = _rooted_shapes(t1)
    s2 = _rooted_shapes(t2)
    common = [
        ls
        for ls, shape in s1.items()
        if s2.get(ls) == shape
    ]
    if not common:
        return None
    return max(common, key=lambda ls: (len(ls), sorted(ls)))


def subtree_reduce(
    t1: PhyloTree, t2: PhyloTree, _start: int = 1
) -> Tuple[PhyloTree, PhyloTree, ReductionTrace]:
    """Repeatedly replace maximal common pendant subtrees by fresh leaves."""
    phylo.shared_taxa(t1, t2)
    steps: List[ReductionStep] = []
    counter = _start
    while True:
        found = _find_common_pendant(t1, t2)
        if found is None:
            break
        while True:
            fresh = f"__S{counter}"
            counter += 1
            if fresh not in t1.taxa.index:
                break
        t1 = _replace_pendant(t1, found, fresh)
        t2 = _replace_pendant(t2, found, fresh)
        steps.append(
            ReductionStep("subtree", tuple(sorted(found)), (fresh,))
        )
    return t1, t2, ReductionTrace(tuple(steps))


def _leaf_attachment(tree: PhyloTree, x: int) -> int:
    return tree.adj[x][0]


def _is_spine(tree: PhyloTree, x: int) -> bool:
    v = _leaf_attachment(tree, x)
    return sum(1 for w in tree.adj[v] if tree.is_leaf(w)) == 1


def _common_chains(t1: PhyloTree, t2: PhyloTree) -> List[List[str]]:
    """Maximal runs of pendant leaves whose attachments are consecutive
    along a path in both trees; ordered, orientation normalized."""
    n = t1.n
    spine = [x for x in range(n) if _is_spine(t1, x) and _is_spine(t2, x)]
    spine_set = set(spine)
    nbr: Dict[int, List[int]] = {x: [] for x in spine}
    for x in spine:
        v1 = _leaf_attachment(t1, x)
        v2 = _leaf_attachment(t2, x)
        for w1 in t1.adj[v1]:
            if t1.is_leaf(w1):
                continue
            for y in t1.adj[w1]:
                if (
                    t1.is_leaf(y)
                    and y != x
                    and y in spine_set
                    and _leaf_attachment(t1, y) == w1
                ):
                    # adjacent attachments in t1; require the same in t2
                    if _leaf_attachment(t2, y) in t2.adj[v2]:
                        nbr[x].append(y)
    chains = []
    seen: Set[int] = set()
    for x in sorted(spine):
        if x in seen or len(nbr[x]) > 1:
            continue
        # walk the path from an end
        run = [x]
        seen.add(x)
        prev, cur = None, x
        while True:
            nexts = [y for y in nbr[cur] if y != prev]
            if not nexts:
                break
            prev, cur = cur, nexts[0]
            if cur in seen:
                break
            run.append(cur)
            seen.add(cur)
        if len(run) >= 2:
            labels = [t1.taxa.label_of(t) for t in run]
            if labels[0] > labels[-1]:
                labels.reverse()
            chains.append(labels)
    return sorted(chains, key=lambda c: (-len(c), c[0]))


def chain_reduce(
    t1: PhyloTree, t2: PhyloTree
) -> Tuple[PhyloTree, PhyloTree, ReductionTrace]:
    """Truncate every common chain longer than 3 to its first 3 leaves."""
    phylo.shared_taxa(t1, t2)
    steps: List[ReductionStep] = []
    while True:
        chains = [c for c in _common_chains(t1, t2) if len(c) >= 4]
        if not chains:
            break
        chain = chains[0]
        keep, tail = chain[:3], chain[3:]
        t1 = _drop_leaves(t1, tail)
        t2 = _drop_leaves(t2, tail)
        steps.append(ReductionStep("chain", tuple(chain), tuple(keep)))
    return t1, t2, ReductionTrace(tuple(steps))


def reduce_pair(
    t1: PhyloTree, t2: PhyloTree
) -> Tuple[PhyloTree, PhyloTree, ReductionTrace]:
    """Both rules to a fixed point (each can expose the other)."""
    steps: List[ReductionStep] = []
    counter = 1
    while True:
        t1, t2, tr = subtree_reduce(t1, t2, _start=counter)
        counter += len(tr.steps)
        steps.extend(tr.steps)
        t1, t2, tr2 = chain_reduce(t1, t2)
        steps.extend(tr2.steps)
        if not tr.steps and not tr2.steps:
            break
    return t1, t2, ReductionTrace(tuple(steps))


# ---------------------------------------------------------------------------
# forest lift
# ---------------------------------------------------------------------------


def _apply_step(t1, t2, step: ReductionStep):
    if step.kind == "subtree":
        fresh = step.replacement[0]
        return (
            _replace_pendant(t1, frozenset(step.replaced), fresh),
            _replace_pendant(t2, frozenset(step.replaced), fresh),
        )
    tail = list(step.replaced[3:])
    return _drop_leaves(t1, tail), _drop_leaves(t2, tail)


def _ids(tree: PhyloTree, block_labels: FrozenSet[str]) -> FrozenSet[int]:
    return frozenset(tree.taxa.id_of(lab) for lab in block_labels)


def _valid(t1, t2, blocks_labels) -> bool:
    try:
        blocks = [_ids(t1, b) for b in blocks_labels]
    except PhyloError:
        return False
    return forest_is_valid(t1, t2, blocks)


def _owner_of_vertex(tree, blocks_labels, vertex, skip) -> Optional[FrozenSet[str]]:
    for b in blocks_labels:
        if b == skip or len(b) < 2:
            continue
        emb = phylo.embedding(tree, _ids(tree, b))
        if vertex in emb.internal_vertices:
            return b
    return None


def _crossing_split(tree, block_labels, vertex):
    """Leaf bipartition of the block's own topology whose edge path runs
    through ``vertex`` (labels)."""
    ids = _ids(tree, block_labels)
    for side_a, side_b, path in phylo.restricted_splits(tree, ids):
        if vertex in path:
            to_lab = tree.taxa.label_of
            return (
                frozenset(to_lab(t) for t in side_a),
                frozenset(to_lab(t) for t in side_b),
            )
    raise LiftError("no restricted edge crosses the chain attachment")


def _refine(block: FrozenSet[str], splits) -> List[FrozenSet[str]]:
    pieces = [block]
    for side_a, _ in splits:
        nxt = []
        for p in pieces:
            pa = p & side_a
            pb = p - side_a
            nxt.extend(x for x in (pa, pb) if x)
        pieces = nxt
    return pieces


def _lift_chain(step, t1_prev, t2_prev, t1_red, t2_red, blocks):
    a1, a2, a3 = step.replaced[:3]
    tail = frozenset(step.replaced[3:])
    b3 = next(b for b in blocks if a3 in b)
    if len(b3) >= 2:
        out = [b | tail if b == b3 else b for b in blocks]
        if _valid(t1_prev, t2_prev, out):
            return out
        raise LiftError("chain extension of a non-singleton block failed")
    u1 = _leaf_attachment(t1_red, t1_red.taxa.id_of(a3))
    u2 = _leaf_attachment(t2_red, t2_red.taxa.id_of(a3))
    o1 = _owner_of_vertex(t1_red, blocks, u1, skip=b3)
    o2 = _owner_of_vertex(t2_red, blocks, u2, skip=b3)
    if o1 is None and o2 is None:
        out = [b | tail if b == b3 else b for b in blocks]
        if _valid(t1_prev, t2_prev, out):
            return out
        raise LiftError("tail insertion at a free attachment failed")
    if o1 is not None and o1 == o2:
        out = [b | tail if b == o1 else b for b in blocks]
        if _valid(t1_prev, t2_prev, out):
            return out
    # cut route: merge the chain singletons, split the occupying blocks
    # along their own restricted edges over the attachment path
    for rep in (a1, a2):
        if not any(b == frozenset({rep}) for b in blocks):
            raise LiftError("chain attachment occupied but ends not free")
    cuts: Dict[FrozenSet[str], List] = {}
    if o1 is not None:
        cuts.setdefault(o1, []).append(_crossing_split(t1_red, o1, u1))
    if o2 is not None:
        seen = cuts.get(o2, [])
        split2 = _crossing_split(t2_red, o2, u2)
        if not any(split2[0] in (s[0], s[1]) for s in seen):
            cuts.setdefault(o2, []).append(split2)
    chain_block = frozenset({a1, a2, a3}) | tail
    out = [
        b
        for b in blocks
        if b not in cuts
        and b not in (frozenset({a1}), frozenset({a2}), frozenset({a3}))
    ]
    out.append(chain_block)
    for owner, splits in cuts.items():
        out.extend(_refine(owner, splits))
    if len(out) > len(blocks):
        raise LiftError("chain lift would grow the forest")
    if not _valid(t1_prev, t2_prev, out):
        raise LiftError("chain cut route failed validation")
    return out


def lift_forest(
    forest_labels: Sequence[FrozenSet[str]],
    trace: ReductionTrace,
    t1_original: PhyloTree,
    t2_original: PhyloTree,
) -> List[FrozenSet[str]]:
    """Expand a forest of the reduced instance back to the originals.

    Returns label blocks; the result is validated at every level and never
    has more blocks than the input (strictly fewer only when the input
    forest was not optimal for the reduced instance).
    """
    levels = [(t1_original, t2_original)]
    for step in trace.steps:
        levels.append(_apply_step(*levels[-1], step))
    blocks = [frozenset(b) for b in forest_labels]
    if not _valid(*levels[-1], blocks):
        raise LiftError("input forest is not valid on the reduced instance")
    for i in range(len(trace.steps) - 1, -1, -1):
        step = trace.steps[i]
        t_prev = levels[i]
        t_red = levels[i + 1]
        if step.kind == "subtree":
            fresh = step.replacement[0]
            expanded = frozenset(step.replaced)
            blocks = [
                (b - {fresh}) | expanded if fresh in b else b for b in blocks
            ]
            if not _valid(*t_prev, blocks):
                raise LiftError("subtree expansion failed validation")
        else:
            blocks = _lift_chain(step, *t_prev, *t_red, blocks)
    return blocks
