"""Instance generation: random binary trees with a skew parameter and
random tree-bisection-and-reconnection (TBR) moves.

All randomness flows through SplitMix64, a fixed 64-bit generator with
portable integer semantics, so identical seeds give identical instances on
every platform.  Uniform draws use rejection sampling (no modulo bias).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

from .phylo import PhyloError, PhyloTree, TaxonSet

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64: state += 0x9E3779B97F4A7C15; output mixes with two
    xor-shift-multiply rounds (constants 0xBF58476D1CE4E5B9 and
    0x94D049BB133111EB)."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % n

    def chance(self, percent: int) -> bool:
        return self.randrange(100) < percent


@dataclass(frozen=True)
class GenSpec:
    """One instance of the reference generation protocol."""

    t: int
    s: int
    k: int
    seed: int

    def __post_init__(self):
        if self.t < 4:
            raise ValueError("t must be at least 4")
        if self.k < 0:
            raise ValueError("k must be non-negative")


def _tree_from_edges(n: int, edges: List[Tuple[int, int]], leaf_labels) -> PhyloTree:
    taxa = TaxonSet(sorted(leaf_labels.values()))
    return PhyloTree.from_edges(taxa, edges, leaf_labels)


def random_tree(t: int, s: int, seed: int, rng: SplitMix64 = None) -> PhyloTree:
    """Sequential leaf insertion from the 3-leaf star.

    Each new leaf attaches, with probability s/100, to the pendant edge of
    the most recently inserted leaf (driving the tree towards a path), and
    otherwise to a uniformly random edge.
    """
    if t < 4:
        raise ValueError("t must be at least 4")
    if rng is None:
        rng = SplitMix64(seed)
    labels = {i: f"t{i + 1}" for i in range(t)}
    center = t  # internal vertex keys start at t
    next_vertex = t + 1
    edges: List[Tuple[int, int]] = [(0, center), (1, center), (2, center)]
    last_leaf = 2
    for leaf in range(3, t):
        if rng.chance(s):
            pick = next(
                i for i, e in enumerate(edges) if last_leaf in e
            )
        else:
            pick = rng.randrange(len(edges))
        a, b = edges.pop(pick)
        mid = next_vertex
        next_vertex += 1
        edges.extend([(a, mid), (mid, b), (leaf, mid)])
        last_leaf = leaf
    return _tree_from_edges(t, edges, labels)


def _suppress_component(adj: Dict[int, List[int]], dropped: int) -> None:
    """After an edge removal left ``dropped`` with degree 2, splice it out."""
    a, b = adj[dropped]
    adj[a] = [x if x != dropped else b for x in adj[a]]
    adj[b] = [x if x != dropped else a for x in adj[b]]
    del adj[dropped]


def tbr_move(tree: PhyloTree, seed: int, rng: SplitMix64 = None) -> PhyloTree:
    """One uniform TBR move: remove a random edge, suppress the exposed
    degree-2 vertices, reconnect via random attachment points in the two
    components."""
    if tree.n < 4:
        raise PhyloError("TBR needs at least 4 leaves")
    if rng is None:
        rng = SplitMix64(seed)
    adj: Dict[int, List[int]] = {
        v: list(tree.adj[v]) for v in range(tree.n_vertices)
    }
    edges = sorted(tree.edges())
    u, v = edges[rng.randrange(len(edges))]
    adj[u].remove(v)
    adj[v].remove(u)
    for w in (u, v):
        if len(adj[w]) == 2:
            _suppress_component(adj, w)

    def component(start: int) -> List[int]:
        seen = {start}
        stack = [start]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return sorted(seen)

    next_vertex = tree.n_vertices  # fresh keys for subdivision vertices

    def attach_point(comp: List[int]) -> int:
        nonlocal next_vertex
        if len(comp) == 1:
            return comp[0]
        comp_set = set(comp)
        comp_edges = sorted(
            (a, b)
            for a in comp
            for b in adj[a]
            if a < b and b in comp_set
        )
        a, b = comp_edges[rng.randrange(len(comp_edges))]
        mid = next_vertex
        next_vertex += 1
        adj[a] = [x if x != b else mid for x in adj[a]]
        adj[b] = [x if x != a else mid for x in adj[b]]
        adj[mid] = [a, b]
        return mid

    # endpoints may have been suppressed; identify the two components by key
    first = component(min(adj))
    rest = [x for x in adj if x not in set(first)]
    if not rest:
        raise PhyloError("edge removal did not split the tree")  # unreachable
    second = component(rest[0])
    p1 = attach_point(first)
    p2 = attach_point(second)
    adj[p1].append(p2)
    adj[p2].append(p1)

    edges_out = [(a, b) for a in adj for b in adj[a] if a < b]
    leaf_labels = {
        x: tree.taxa.label_of(x) for x in adj if x < tree.n
    }
    return _tree_from_edges(tree.n, edges_out, leaf_labels)


def generate_pair(spec: GenSpec) -> Tuple[PhyloTree, PhyloTree]:
    """T1 is the random tree; T2 is T1 after k successive TBR moves.
    Fully deterministic under the seed."""
    rng = SplitMix64(spec.seed)
    t1 = random_tree(spec.t, spec.s, spec.seed, rng=rng)
    t2 = t1
    for _ in range(spec.k):
        t2 = tbr_move(t2, 0, rng=rng)
    return t1, t2
