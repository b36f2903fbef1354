"""Strict Newick reader and canonical writer for unrooted binary trees.

Branch lengths are accepted and discarded; square-bracket comments are
rejected.  Rooted (two-child top level) input is unrooted by suppressing
the top vertex; a three-child top level is taken as-is.
"""

from __future__ import annotations

from typing import Dict, List, Tuple

from .phylo import PhyloTree, TaxonSet, canonical_newick

_LABEL_FORBIDDEN = set("(),;:[]") | set(" \t\r\n")


class NewickError(ValueError):
    """Syntax or validation error, with the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> NewickError:
        return NewickError(message, self.pos)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        if self.pos >= len(self.text):
            raise self.error("unexpected end of input")
        return self.text[self.pos]

    def take(self, ch: str) -> None:
        if self.peek() != ch:
            raise self.error(f"expected {ch!r}, found {self.text[self.pos]!r}")
        self.pos += 1

    def label(self) -> str:
        self.skip_ws()
        start = self.pos
        while (
            self.pos < len(self.text)
            and self.text[self.pos] not in _LABEL_FORBIDDEN
        ):
            self.pos += 1
        if self.pos == start:
            if self.pos < len(self.text) and self.text[self.pos] == "[":
                raise self.error("square-bracket comments are not supported")
            raise self.error("expected a leaf label")
        return self.text[start : self.pos]

    def branch_length(self) -> None:
        # optional ":<number>", parsed and discarded
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == ":":
            self.pos += 1
            start = self.pos
            while self.pos < len(self.text) and (
                self.text[self.pos].isdigit()
                or self.text[self.pos] in ".+-eE"
            ):
                self.pos += 1
            try:
                float(self.text[start : self.pos])
            except ValueError:
                self.pos = start
                raise self.error("malformed branch length") from None

    def subtree(self, nodes: List[Tuple[str, List[int]]]) -> int:
        """Parse one subtree, append (label|None, children) rows to nodes,
        return the row index of the subtree root."""
        if self.peek() == "(":
            self.take("(")
            children = [self.subtree(nodes)]
            while self.peek() == ",":
                self.take(",")
                children.append(self.subtree(nodes))
            self.take(")")
            self.branch_length()
            nodes.append((None, children))
            return len(nodes) - 1
        if self.peek() == "[":
            raise self.error("square-bracket comments are not supported")
        lab = self.label()
        self.branch_length()
        nodes.append((lab, []))
        return len(nodes) - 1


def parse(text: str) -> PhyloTree:
    """Parse one Newick document into an unrooted binary tree.

    Raises NewickError on syntax problems and duplicate labels, and on
    any vertex that is not binary after unrooting or fewer than 3 leaves.
    """
    parser = _Parser(text)
    nodes: List[Tuple[str, List[int]]] = []
    root = parser.subtree(nodes)
    parser.take(";")
    parser.skip_ws()
    if parser.pos != len(text):
        raise parser.error("trailing characters after ';'")

    labels = [lab for lab, _ in nodes if lab is not None]
    if len(labels) != len(set(labels)):
        dup = sorted(lab for lab in set(labels) if labels.count(lab) > 1)[0]
        raise NewickError(f"duplicate leaf label {dup!r}", len(text))
    if len(labels) < 3:
        raise NewickError("tree must have at least 3 leaves", len(text))

    # collect undirected edges over node rows, unrooting a binary top level
    edges: List[Tuple[int, int]] = []
    for i, (lab, children) in enumerate(nodes):
        for c in children:
            edges.append((i, c))
    top_label, top_children = nodes[root]
    if top_label is not None:
        raise NewickError("top level must be a group", 0)
    if len(top_children) == 2:
        a, b = top_children
        edges = [e for e in edges if root not in e]
        edges.append((a, b))
    elif len(top_children) != 3:
        raise NewickError(
            f"top-level vertex has {len(top_children)} children after "
            "unrooting; tree is not binary",
            0,
        )
    # all other groups must be strictly binary
    for i, (lab, children) in enumerate(nodes):
        if i != root and lab is None and len(children) != 2:
            raise NewickError(
                f"internal vertex with {len(children)} children; "
                "tree is not binary",
                0,
            )

    taxa = TaxonSet(sorted(labels))
    leaf_of: Dict[int, str] = {
        i: lab for i, (lab, ch) in enumerate(nodes) if lab is not None
    }
    return PhyloTree.from_edges(taxa, edges, leaf_of)


def serialize(tree: PhyloTree) -> str:
    """Canonical Newick text; constant on label-isomorphism classes."""
    return canonical_newick(tree)


def read_tree_file(path: str) -> PhyloTree:
    """Read a single tree from a Newick file (UTF-8)."""
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read().strip())


def write_tree_file(path: str, tree: PhyloTree) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(tree) + "\n")
