"""Unrooted binary phylogenetic tree model.

Trees are immutable after construction.  Vertices are stable small integers:
leaves occupy ids ``0 .. n-1`` in taxon order, internal vertices follow.
Topology comparisons go through canonical serialization (deterministic, and
the same strings double as hash keys for blocks and columns).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple


class PhyloError(ValueError):
    """Malformed tree, unknown taxon, or violated structural invariant."""


class TaxonSet:
    """Bijection between taxon labels and integer ids in ``[0, n)``.

    The label order given to the constructor is preserved; parsers sort
    labels lexicographically first so that any two trees over the same label
    set share taxon ids.
    """

    __slots__ = ("labels", "index")

    def __init__(self, labels: Sequence[str]):
        labels = tuple(labels)
        if len(set(labels)) != len(labels):
            raise PhyloError("duplicate taxon labels")
        self.labels: Tuple[str, ...] = labels
        self.index: Dict[str, int] = {lab: i for i, lab in enumerate(labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, TaxonSet) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    def __repr__(self):
        return f"TaxonSet({list(self.labels)!r})"

    def id_of(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise PhyloError(f"unknown taxon label {label!r}") from None

    def label_of(self, taxon: int) -> str:
        return self.labels[taxon]


class PhyloTree:
    """Unrooted binary leaf-labelled tree.

    Every leaf has degree 1 and a taxon id, every internal vertex has
    degree 3; with ``n`` leaves there are exactly ``n - 2`` internal
    vertices.  Leaf vertex ids equal their taxon ids.
    """

    __slots__ = ("taxa", "adj", "_handles")

    def __init__(self, taxa: TaxonSet, adj: Sequence[Sequence[int]]):
        self.taxa = taxa
        self.adj: Tuple[Tuple[int, ...], ...] = tuple(
            tuple(sorted(nb)) for nb in adj
        )
        self._handles = None
        self._validate()

    # -- construction --------------------------------------------------

    @classmethod
    def from_edges(
        cls,
        taxa: TaxonSet,
        edges: Iterable[Tuple[object, object]],
        leaf_of: Dict[object, str],
    ) -> "PhyloTree":
        """Build a tree from arbitrary (sortable) vertex keys.

        ``leaf_of`` maps the leaf vertex keys to taxon labels.  Leaf keys
        are renumbered to their taxon ids, internal keys to ``n ..`` in
        sorted key order, which keeps construction deterministic.
        """
        edges = list(edges)
        keys = {u for e in edges for u in e}
        internal = sorted(k for k in keys if k not in leaf_of)
        remap: Dict[object, int] = {}
        for key, label in leaf_of.items():
            remap[key] = taxa.id_of(label)
        for i, key in enumerate(internal):
            remap[key] = len(taxa) + i
        adj: List[List[int]] = [[] for _ in range(len(keys))]
        for u, v in edges:
            adj[remap[u]].append(remap[v])
            adj[remap[v]].append(remap[u])
        return cls(taxa, adj)

    def _validate(self) -> None:
        n = len(self.taxa)
        nv = len(self.adj)
        if n < 3:
            raise PhyloError(f"tree needs at least 3 leaves, got {n}")
        if nv != 2 * n - 2:
            raise PhyloError(f"expected {2 * n - 2} vertices, got {nv}")
        for v in range(nv):
            deg = len(self.adj[v])
            want = 1 if v < n else 3
            if deg != want:
                raise PhyloError(
                    f"vertex {v} has degree {deg}, expected {want}"
                )
            if len(set(self.adj[v])) != deg or v in self.adj[v]:
                raise PhyloError(f"vertex {v} has malformed adjacency")
        # Connectivity: a tree on nv vertices with nv-1 edges is connected
        # iff a traversal reaches everything.
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for w in self.adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != nv:
            raise PhyloError("tree is not connected")

    # -- basic queries --------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.taxa)

    @property
    def n_vertices(self) -> int:
        return len(self.adj)

    def is_leaf(self, v: int) -> bool:
        return v < len(self.taxa)

    def leaf_taxon(self, v: int) -> Optional[int]:
        return v if v < len(self.taxa) else None

    def leaf_vertex(self, taxon: int) -> int:
        return taxon

    def neighbors(self, v: int) -> Tuple[int, ...]:
        return self.adj[v]

    def internal_vertices(self) -> Tuple[int, ...]:
        return tuple(range(len(self.taxa), len(self.adj)))

    def edges(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(
            (u, v) for u in range(len(self.adj)) for v in self.adj[u] if u < v
        )

    def __repr__(self):
        return f"PhyloTree(n={self.n})"


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def _subtree_string(adj, label_at, v: int, parent: int) -> Tuple[str, str]:
    """Return (newick fragment, smallest contained label) for the subtree
    hanging at ``v`` away from ``parent``.  Iterative post-order to stay
    clear of the recursion limit on caterpillar trees."""
    # order[] holds (v, parent) in discovery order; results filled backwards
    order: List[Tuple[int, int]] = []
    stack = [(v, parent)]
    while stack:
        node, par = stack.pop()
        order.append((node, par))
        lab = label_at(node)
        if lab is None:
            for w in adj[node]:
                if w != par:
                    stack.append((w, node))
    result: Dict[Tuple[int, int], Tuple[str, str]] = {}
    for node, par in reversed(order):
        lab = label_at(node)
        if lab is not None:
            result[(node, par)] = (lab, lab)
        else:
            parts = sorted(
                (result[(w, node)] for w in adj[node] if w != par),
                key=lambda sm: sm[1],
            )
            text = "(" + ",".join(p[0] for p in parts) + ")"
            result[(node, par)] = (text, parts[0][1])
    return result[(v, parent)]


def _canonical_from_adj(adj, label_at) -> str:
    """Canonical Newick for an unrooted tree given by an adjacency map.

    The tree is written with a trifurcation at the internal vertex adjacent
    to the lexicographically smallest leaf; groupings are ordered by their
    smallest contained label.  1- and 2-leaf topologies serialize as "x;"
    and "(x,y);".
    """
    leaves = [(label_at(v), v) for v in adj if label_at(v) is not None]
    leaves.sort()
    if len(leaves) == 1:
        return leaves[0][0] + ";"
    if len(leaves) == 2:
        return "(" + leaves[0][0] + "," + leaves[1][0] + ");"
    smallest = leaves[0][1]
    root = adj[smallest][0]
    parts = sorted(
        (_subtree_string(adj, label_at, w, root) for w in adj[root]),
        key=lambda sm: sm[1],
    )
    return "(" + ",".join(p[0] for p in parts) + ");"


def canonical_newick(tree: PhyloTree) -> str:
    """Canonical serialization of a full tree; constant on label-isomorphism
    classes."""
    adj = {v: tree.adj[v] for v in range(tree.n_vertices)}

    def label_at(v):
        t = tree.leaf_taxon(v)
        return None if t is None else tree.taxa.label_of(t)

    return _canonical_from_adj(adj, label_at)


def label_isomorphic(t1: PhyloTree, t2: PhyloTree) -> bool:
    return canonical_newick(t1) == canonical_newick(t2)


# ---------------------------------------------------------------------------
# Restriction and embeddings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Embedding:
    """Minimal connecting subtree of a block before suppression."""

    block: FrozenSet[int]
    span_vertices: FrozenSet[int]
    internal_vertices: FrozenSet[int]


def _check_block(tree: PhyloTree, block) -> FrozenSet[int]:
    block = frozenset(block)
    if not block:
        raise PhyloError("block must be non-empty")
    for t in block:
        if not 0 <= t < tree.n:
            raise PhyloError(f"unknown taxon id {t}")
    return block


def embedding(tree: PhyloTree, block: Iterable[int]) -> Embedding:
    """Union of pairwise tree paths among the block's leaves."""
    block = _check_block(tree, block)
    leaves = sorted(block)
    root = tree.leaf_vertex(leaves[0])
    # parent pointers from a traversal rooted at one block leaf
    parent = {root: root}
    stack = [root]
    while stack:
        u = stack.pop()
        for w in tree.adj[u]:
            if w not in parent:
                parent[w] = u
                stack.append(w)
    span = {root}
    for t in leaves[1:]:
        v = tree.leaf_vertex(t)
        while v not in span:
            span.add(v)
            v = parent[v]
    internal = frozenset(v for v in span if not tree.is_leaf(v))
    return Embedding(block, frozenset(span), internal)


def _restricted_adj(tree: PhyloTree, block: FrozenSet[int]):
    """Suppressed restricted topology: adjacency over kept host vertices,
    plus the host-path vertex set behind every restricted edge."""
    span = embedding(tree, block).span_vertices
    deg = {v: sum(1 for w in tree.adj[v] if w in span) for v in span}
    kept = {v for v in span if tree.is_leaf(v) or deg[v] == 3}
    if len(kept) == 1:  # single leaf
        (v,) = kept
        return {v: []}, {}
    adj: Dict[int, List[int]] = {v: [] for v in kept}
    edge_path: Dict[Tuple[int, int], FrozenSet[int]] = {}
    for v in kept:
        for w in tree.adj[v]:
            if w not in span:
                continue
            # walk through suppressed degree-2 vertices to the next kept one
            path = []
            prev, cur = v, w
            while cur not in kept:
                path.append(cur)
                nxt = next(x for x in tree.adj[cur] if x in span and x != prev)
                prev, cur = cur, nxt
            if v < cur:  # each restricted edge is found once from either end
                adj[v].append(cur)
                adj[cur].append(v)
                edge_path[(v, cur)] = frozenset(path)
    return adj, edge_path


def restrict(tree: PhyloTree, block: Iterable[int]) -> str:
    """Canonical descriptor of ``tree`` restricted to ``block`` (degree-2
    vertices suppressed)."""
    block = _check_block(tree, block)
    adj, _ = _restricted_adj(tree, block)

    def label_at(v):
        t = tree.leaf_taxon(v)
        if t is None or t not in block:
            return None
        return tree.taxa.label_of(t)

    return _canonical_from_adj(adj, label_at)


def is_agreement_block(t1: PhyloTree, t2: PhyloTree, block: Iterable[int]) -> bool:
    """True iff both trees induce the same topology on the block."""
    block = frozenset(block)
    return restrict(t1, block) == restrict(t2, block)


def restricted_splits(tree: PhyloTree, block: Iterable[int]):
    """Leaf bipartitions of the restricted topology, one per restricted
    edge, each tagged with the host vertices its path runs through.

    Used by the data-reduction lift to cut a block along one of its own
    edges.  Returns a list of (side_a, side_b, path_vertices) with the
    sides as frozensets of taxon ids.
    """
    block = _check_block(tree, block)
    adj, edge_path = _restricted_adj(tree, block)
    out = []
    for (u, v), path in edge_path.items():
        # leaves reachable from u without crossing the (u, v) edge
        side = set()
        stack = [(u, v)]
        seen = {u}
        while stack:
            node, ban = stack.pop()
            t = tree.leaf_taxon(node)
            if t is not None and t in block:
                side.add(t)
            for w in adj[node]:
                if node == u and w == ban:
                    continue
                if w not in seen:
                    seen.add(w)
                    stack.append((w, -1))
        side_a = frozenset(side)
        side_b = block - side_a
        full_path = frozenset(path | {u, v})
        out.append((side_a, side_b, full_path))
    return out


# ---------------------------------------------------------------------------
# Rooted subtree handles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RootedSubtree:
    """Directed-edge handle (u -> v): the component of the host tree minus
    edge {u, v} that contains ``v``, rooted at ``v``.  A handle whose root
    is a leaf denotes a singleton rooted tree."""

    tree: PhyloTree
    away: int  # u, the far endpoint of the cut edge
    root: int  # v
    index: int  # position in the host tree's handle table

    @property
    def cut_edge(self) -> Tuple[int, int]:
        return (min(self.away, self.root), max(self.away, self.root))

    def is_singleton(self) -> bool:
        return self.tree.is_leaf(self.root)

    def children(self) -> Tuple["RootedSubtree", ...]:
        table = handle_table(self.tree)
        return tuple(
            table.handles[c] for c in table.children[self.index] if c >= 0
        )

    def leaf_count(self) -> int:
        return handle_table(self.tree).leaf_count[self.index]

    def leaf_set(self) -> FrozenSet[int]:
        return handle_table(self.tree).leaf_sets[self.index]


class HandleTable:
    """All 2*(#edges) directed-edge handles of one tree, in an order where
    every handle appears after both of its children (non-decreasing leaf
    count).  Children of a handle are O(1) lookups."""

    def __init__(self, tree: PhyloTree):
        self.tree = tree
        ids: Dict[Tuple[int, int], int] = {}
        pairs: List[Tuple[int, int]] = []
        for u, v in tree.edges():
            for a, b in ((u, v), (v, u)):
                ids[(a, b)] = len(pairs)
                pairs.append((a, b))
        nh = len(pairs)
        children: List[Tuple[int, int]] = [(-1, -1)] * nh
        opposite: List[int] = [0] * nh
        for (a, b), h in ids.items():
            opposite[h] = ids[(b, a)]
            if not tree.is_leaf(b):
                w1, w2 = (x for x in tree.adj[b] if x != a)
                children[h] = (ids[(b, w1)], ids[(b, w2)])
        counts = [0] * nh
        # leaf counts bottom-up; order by count afterwards
        done = [False] * nh
        pending = list(range(nh))
        while pending:
            rest = []
            for h in pending:
                ca, cb = children[h]
                if ca < 0:
                    counts[h] = 1
                    done[h] = True
                elif done[ca] and done[cb]:
                    counts[h] = counts[ca] + counts[cb]
                    done[h] = True
                else:
                    rest.append(h)
            pending = rest
        order = sorted(range(nh), key=lambda h: (counts[h], h))
        leaf_sets: List[FrozenSet[int]] = [frozenset()] * nh
        for h in order:
            ca, cb = children[h]
            if ca < 0:
                leaf_sets[h] = frozenset({tree.leaf_taxon(pairs[h][1])})
            else:
                leaf_sets[h] = leaf_sets[ca] | leaf_sets[cb]
        self.pairs = pairs
        self.ids = ids
        self.children = children
        self.opposite = opposite
        self.leaf_count = counts
        self.order = order
        self.leaf_sets = leaf_sets
        self.handles = [
            RootedSubtree(tree, a, b, h) for h, (a, b) in enumerate(pairs)
        ]


def handle_table(tree: PhyloTree) -> HandleTable:
    if tree._handles is None:
        tree._handles = HandleTable(tree)
    return tree._handles


def rooted_subtrees(tree: PhyloTree) -> Tuple[RootedSubtree, ...]:
    """All directed-edge handles in non-decreasing leaf-count order."""
    table = handle_table(tree)
    return tuple(table.handles[h] for h in table.order)


def shared_taxa(t1: PhyloTree, t2: PhyloTree) -> None:
    """Raise unless both trees are over the identical TaxonSet."""
    if t1.taxa != t2.taxa:
        raise PhyloError("trees are not over the same taxon set")
