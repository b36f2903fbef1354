"""Brute-force ground truth: exact agreement forests by partition
enumeration and exact weighted agreement subtrees by subset enumeration.

The oracle exists to be obviously correct.  Limits are hard errors, never
silent truncation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple

from . import phylo
from .phylo import PhyloTree


class OracleLimitError(ValueError):
    """Instance exceeds the enumeration limit."""


@dataclass(frozen=True)
class OracleLimits:
    max_taxa_umaf: int = 8
    max_taxa_wmast: int = 12


DEFAULT_LIMITS = OracleLimits()


def all_agreement_blocks(
    t1: PhyloTree, t2: PhyloTree
) -> Dict[FrozenSet[int], Tuple[FrozenSet[int], FrozenSet[int]]]:
    """Every agreement block, mapped to its internal-vertex embeddings.
    Exponential; intended for oracle-scale instances only."""
    phylo.shared_taxa(t1, t2)
    n = t1.n
    out: Dict[FrozenSet[int], Tuple[FrozenSet[int], FrozenSet[int]]] = {}
    for bits in range(1, 1 << n):
        block = frozenset(i for i in range(n) if bits >> i & 1)
        if phylo.is_agreement_block(t1, t2, block):
            out[block] = (
                phylo.embedding(t1, block).internal_vertices,
                phylo.embedding(t2, block).internal_vertices,
            )
    return out


def _partitions_into(n: int, k: int) -> Iterator[List[List[int]]]:
    """Set partitions of range(n) into exactly k blocks, deterministic
    order (elements assigned left to right)."""

    blocks: List[List[int]] = []

    def rec(i: int) -> Iterator[List[List[int]]]:
        if i == n:
            if len(blocks) == k:
                yield [list(b) for b in blocks]
            return
        if len(blocks) + (n - i) < k:
            return  # cannot open enough new blocks any more
        for b in blocks:
            b.append(i)
            yield from rec(i + 1)
            b.pop()
        if len(blocks) < k:
            blocks.append([i])
            yield from rec(i + 1)
            blocks.pop()

    yield from rec(0)


def forest_is_valid(t1: PhyloTree, t2: PhyloTree, blocks) -> bool:
    """Agreement-forest conditions: every block agrees and embeddings are
    pairwise vertex-disjoint within each tree (blocks must partition X)."""
    seen: set = set()
    for b in blocks:
        if seen & b:
            return False
        seen |= b
    if seen != set(range(t1.n)):
        return False
    used1: set = set()
    used2: set = set()
    for b in blocks:
        if not phylo.is_agreement_block(t1, t2, b):
            return False
        e1 = phylo.embedding(t1, b).internal_vertices
        e2 = phylo.embedding(t2, b).internal_vertices
        if used1 & e1 or used2 & e2:
            return False
        used1 |= e1
        used2 |= e2
    return True


@dataclass(frozen=True)
class BruteForestResult:
    size: int
    forest: Tuple[FrozenSet[int], ...]


def brute_umaf(
    t1: PhyloTree,
    t2: PhyloTree,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> BruteForestResult:
    """First valid partition in non-decreasing block-count order."""
    phylo.shared_taxa(t1, t2)
    n = t1.n
    if n > limits.max_taxa_umaf:
        raise OracleLimitError(
            f"brute_umaf limited to {limits.max_taxa_umaf} taxa, got {n}"
        )
    blocks_info = all_agreement_blocks(t1, t2)

    def block_ok(b: FrozenSet[int]) -> bool:
        return b in blocks_info

    for k in range(1, n + 1):
        for part in _partitions_into(n, k):
            cand = [frozenset(b) for b in part]
            if not all(block_ok(b) for b in cand):
                continue
            used1: set = set()
            used2: set = set()
            good = True
            for b in cand:
                e1, e2 = blocks_info[b]
                if used1 & e1 or used2 & e2:
                    good = False
                    break
                used1 |= e1
                used2 |= e2
            if good:
                ordered = tuple(
                    sorted(cand, key=lambda b: sorted(b))
                )
                return BruteForestResult(k, ordered)
    raise AssertionError("all-singletons partition is always valid")


@dataclass(frozen=True)
class BruteWmastResult:
    value: float
    block: FrozenSet[int]


def brute_wmast(
    t1: PhyloTree,
    t2: PhyloTree,
    weights,
    limits: OracleLimits = DEFAULT_LIMITS,
) -> BruteWmastResult:
    """Maximize the weighted objective over all non-empty agreeing subsets."""
    phylo.shared_taxa(t1, t2)
    n = t1.n
    if n > limits.max_taxa_wmast:
        raise OracleLimitError(
            f"brute_wmast limited to {limits.max_taxa_wmast} taxa, got {n}"
        )
    best: Optional[Tuple[float, FrozenSet[int]]] = None
    for block, (e1, e2) in all_agreement_blocks(t1, t2).items():
        value = sum(float(weights.leaf[t]) for t in block)
        value += sum(float(weights.internal1[v]) for v in e1)
        value += sum(float(weights.internal2[v]) for v in e2)
        if best is None or value > best[0]:
            best = (value, block)
    assert best is not None
    return BruteWmastResult(best[0], best[1])


def brute_perturbed_best(t1, t2, alpha, beta1, beta2, epsilon) -> float:
    """Exact maximum of the perturbed pricing objective (test oracle)."""
    best = float("-inf")
    for block, (e1, e2) in all_agreement_blocks(t1, t2).items():
        val = sum(float(alpha[t]) for t in block)
        val -= sum(float(beta1[v]) for v in e1)
        val -= sum(float(beta2[v]) for v in e2)
        m = max(
            [float(beta1[v]) for v in e1] + [float(beta2[v]) for v in e2],
            default=0.0,
        )
        best = max(best, val - epsilon * m)
    return best
