"""Tree shapes, decorated k-trees, and deterministic tree surgery.

A shape on a finite label set A is stored as its internal edges: each edge is
the set of leaf labels above it, the root edge is A itself, and leaf edges
{i} are implicit.  Shapes are rooted and binary (every internal edge has
exactly two children among edges and singletons, partitioning it).

A k-tree decorates a shape with nonnegative top masses on the leaves and an
interval partition on every internal edge.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .partition import EMPTY, IntervalPartition, concat, diversity, scale as pscale

__all__ = [
    "TreeShape",
    "KTree",
    "BlockRef",
    "LeafRef",
    "InternalRef",
    "validate_shape",
    "enumerate_shapes",
    "uniform_shape",
    "edge_type",
    "parent_edge",
    "sibling_edge",
    "swap_and_reduce_shape",
    "swap_and_reduce_tree",
    "insert_label",
    "project_minus",
    "project_to",
    "degenerate_label",
    "distance_to_zero",
    "shape_text",
    "validate_ktree",
    "ZERO_TREE",
]

Edge = frozenset


def _canon(edges: Iterable[frozenset]) -> tuple[tuple[int, ...], ...]:
    return tuple(sorted((tuple(sorted(e)) for e in edges)))


@dataclass(frozen=True)
class TreeShape:
    """Rooted binary tree shape as a set of internal edge label-sets."""

    labels: frozenset
    edges: frozenset

    @staticmethod
    def from_edges(edges: Iterable[Iterable[int]], labels: Optional[Iterable[int]] = None) -> "TreeShape":
        edge_set = frozenset(frozenset(e) for e in edges)
        if labels is None:
            if not edge_set:
                raise ValueError("labels required when the edge set is empty")
            labels = frozenset().union(*edge_set)
        return TreeShape(frozenset(labels), edge_set)

    def sorted_edges(self) -> list[frozenset]:
        return sorted(self.edges, key=lambda e: tuple(sorted(e)))

    def __iter__(self):
        return iter(self.sorted_edges())

    def __len__(self):
        return len(self.edges)

    def __repr__(self):
        return f"TreeShape({shape_text(self)})"


def shape_text(shape: TreeShape) -> str:
    """Canonical text form: lexicographically sorted list of sorted label lists."""
    return "[" + ",".join("[" + ",".join(map(str, e)) + "]" for e in _canon(shape.edges)) + "]"


def children(shape: TreeShape, edge: frozenset) -> list[frozenset]:
    """Maximal proper subsets of `edge` among internal edges and singletons."""
    cands = [e for e in shape.edges if e < edge]
    cands += [frozenset([i]) for i in edge if frozenset([i]) not in cands]
    out = []
    for c in cands:
        if len(c) == 1 and any(c < d for d in shape.edges if d < edge):
            continue
        if not any(c < d and d < edge for d in shape.edges):
            out.append(c)
    return sorted(set(out), key=lambda e: tuple(sorted(e)))


def validate_shape(shape: TreeShape) -> list[str]:
    """All shape invariants; returns a list of violations (empty means valid)."""
    violations = []
    labels = shape.labels
    if not labels:
        return ["label set is empty"]
    if len(labels) == 1:
        if shape.edges:
            violations.append("a single-label shape must have no internal edges")
        return violations
    if labels not in shape.edges:
        violations.append("missing root edge (the full label set)")
    for e in shape.edges:
        if len(e) < 2:
            violations.append(f"edge {sorted(e)} has fewer than 2 labels")
        if not e <= labels:
            violations.append(f"edge {sorted(e)} is not a subset of the label set")
    if len(shape.edges) != len(labels) - 1:
        violations.append(
            f"{len(shape.edges)} internal edges for {len(labels)} labels (want {len(labels) - 1})"
        )
    for e in shape.edges:
        ch = children(shape, e)
        if len(ch) != 2:
            violations.append(f"edge {sorted(e)} has {len(ch)} children (want 2)")
            continue
        a, b = ch
        if a | b != e or a & b:
            violations.append(f"children of {sorted(e)} do not partition it")
    return violations


def enumerate_shapes(labels: Iterable[int]) -> list[TreeShape]:
    """All shapes on the label set, by recursive leaf insertion; the count is
    (2k-3)!! for k labels."""
    labels = sorted(set(labels))
    if not labels:
        raise ValueError("label set must be nonempty")
    first, rest = labels[0], labels[1:]
    shapes = [TreeShape(frozenset([first]), frozenset())]
    done = {first}
    for lab in rest:
        grown = []
        for s in shapes:
            sites = list(s.edges) + [frozenset([i]) for i in done]
            for site in sites:
                grown.append(_shape_insert(s, site, lab))
        shapes = grown
        done.add(lab)
    return shapes


def uniform_shape(labels: Iterable[int], rng) -> TreeShape:
    """Uniform random shape: insert labels one at a time at a uniform edge.

    Each shape on n labels arises from exactly one predecessor by one
    insertion, so the chain is uniform at every size.
    """
    labels = sorted(set(labels))
    shape = TreeShape(frozenset(labels[:1]), frozenset())
    done = labels[:1]
    gen = rng.generator
    for lab in labels[1:]:
        sites = shape.sorted_edges() + [frozenset([i]) for i in done]
        site = sites[gen.integers(len(sites))]
        shape = _shape_insert(shape, site, lab)
        done.append(lab)
    return shape


def _shape_insert(shape: TreeShape, site: frozenset, j: int) -> TreeShape:
    """Replace edge `site` by a path of length 2 with leaf j branching off."""
    new_edges = set()
    for e in shape.edges:
        new_edges.add(e | {j} if site < e else e)
    new_edges.add(site | {j})
    return TreeShape(shape.labels | {j}, frozenset(new_edges))


def edge_type(shape: TreeShape, edge: frozenset) -> int:
    """Number of leaf (singleton) children of an internal edge: 0, 1, or 2."""
    if edge not in shape.edges:
        raise KeyError(f"edge {sorted(edge)} not in shape")
    return sum(1 for c in children(shape, edge) if len(c) == 1)


def parent_edge(shape: TreeShape, edge: frozenset) -> frozenset:
    """Smallest edge strictly containing `edge`."""
    ups = [e for e in shape.edges if edge < e]
    if not ups:
        raise KeyError(f"{sorted(edge)} has no parent edge")
    return min(ups, key=len)


def sibling_edge(shape: TreeShape, edge: frozenset) -> frozenset:
    """The other child (possibly a singleton) of the parent of `edge`."""
    p = parent_edge(shape, edge)
    for c in children(shape, p):
        if c != edge:
            return c
    raise RuntimeError(f"no sibling found for {sorted(edge)}")


def swap_and_reduce_shape(shape: TreeShape, i: int) -> tuple[TreeShape, int]:
    """Swap label i with j = max(i, least sibling label, least uncle label),
    then delete leaf j and contract its parent.  Returns (new shape, j).

    With no uncle (parent of {i} is the root edge) the uncle term is 0.
    """
    if i not in shape.labels:
        raise KeyError(f"label {i} not in shape")
    if len(shape.labels) < 2:
        raise ValueError("need at least two labels to reduce")
    leaf = frozenset([i])
    a = min(sibling_edge(shape, leaf))
    p = parent_edge(shape, leaf)
    b = 0 if p == shape.labels else min(sibling_edge(shape, p))
    j = max(i, a, b)
    phi = lambda e: frozenset((e - {i, j}) | ({i} if j in e else set()))
    new_edges = frozenset(phi(e) for e in shape.edges if e != p)
    return TreeShape(frozenset(shape.labels - {j}), new_edges), j


# ---------------------------------------------------------------------------
# Decorated trees


@dataclass(frozen=True)
class LeafRef:
    """Reference to the top-mass block of a leaf label."""

    label: int


@dataclass(frozen=True)
class InternalRef:
    """Reference to one block of an internal edge partition, by block index."""

    edge: tuple
    index: int


BlockRef = Union[LeafRef, InternalRef]


class KTree:
    """Tree shape with leaf top masses and per-internal-edge partitions."""

    __slots__ = ("shape", "tops", "partitions")

    def __init__(self, shape: TreeShape, tops: dict, partitions: dict):
        if set(tops) != set(shape.labels):
            raise ValueError("tops must be keyed by exactly the shape labels")
        part_keys = {frozenset(e) for e in partitions}
        if part_keys != set(shape.edges):
            raise ValueError("partitions must be keyed by exactly the internal edges")
        for lab, x in tops.items():
            if x < 0:
                raise ValueError(f"negative top mass on label {lab}")
        self.shape = shape
        self.tops = {int(k): float(v) for k, v in tops.items()}
        self.partitions = {frozenset(e): p for e, p in partitions.items()}

    @property
    def labels(self) -> frozenset:
        return self.shape.labels

    @property
    def mass(self) -> float:
        return sum(self.tops.values()) + sum(p.mass for p in self.partitions.values())

    def sorted_labels(self) -> list[int]:
        return sorted(self.labels)

    def sorted_edges(self) -> list[frozenset]:
        return self.shape.sorted_edges()

    def blocks(self) -> list[BlockRef]:
        refs: list[BlockRef] = [LeafRef(i) for i in self.sorted_labels()]
        for e in self.sorted_edges():
            key = tuple(sorted(e))
            refs += [InternalRef(key, idx) for idx in range(len(self.partitions[e]))]
        return refs

    def block_mass(self, ref: BlockRef) -> float:
        if isinstance(ref, LeafRef):
            return self.tops[ref.label]
        return float(self.partitions[frozenset(ref.edge)].blocks[ref.index])

    def __repr__(self):
        return f"KTree(labels={self.sorted_labels()}, mass={self.mass:.6g})"


ZERO_TREE = KTree(TreeShape(frozenset([1]), frozenset()), {1: 0.0}, {})


def validate_ktree(tree: KTree, allow_one_degenerate: bool = True) -> list[str]:
    """Invariants of the evolution state spaces; returns violations.

    Type-2 sibling tops must not both vanish, and at most one label may have
    zero top above an empty parent partition (none, if allow_one_degenerate
    is False).
    """
    violations = list(validate_shape(tree.shape))
    if len(tree.labels) == 1:
        return violations
    degenerate = []
    for i in tree.sorted_labels():
        p = parent_edge(tree.shape, frozenset([i]))
        if tree.tops[i] + tree.partitions[p].mass == 0.0:
            degenerate.append(i)
    for e in tree.sorted_edges():
        ch = children(tree.shape, e)
        if all(len(c) == 1 for c in ch):
            i, j = (min(c) for c in ch)
            if tree.tops[i] + tree.tops[j] == 0.0:
                violations.append(f"type-2 edge {sorted(e)} has both tops zero")
    limit = 1 if allow_one_degenerate else 0
    if len(degenerate) > limit:
        violations.append(f"degenerate labels {degenerate} (at most {limit} allowed)")
    return violations


def degenerate_label(tree: KTree) -> Optional[int]:
    """The unique label whose top plus parent-edge partition mass is zero, or
    None.  Raises if two labels are degenerate at once."""
    if len(tree.labels) == 1:
        return None
    found = []
    for i in tree.sorted_labels():
        p = parent_edge(tree.shape, frozenset([i]))
        if tree.tops[i] + tree.partitions[p].mass == 0.0:
            found.append(i)
    if len(found) > 1:
        raise ValueError(f"two degenerate labels at once: {found}")
    return found[0] if found else None


def swap_and_reduce_tree(tree: KTree) -> KTree:
    """Reduce a tree with exactly one degenerate label: swap it with the
    dropped label, delete that leaf, contract its parent edge.

    The degenerate compound carries zero mass, so total mass is preserved
    exactly.
    """
    i = degenerate_label(tree)
    if i is None:
        raise ValueError("no degenerate label; swap-and-reduce does not apply")
    p = parent_edge(tree.shape, frozenset([i]))
    if tree.partitions[p].mass != 0.0:
        raise ValueError("degenerate label's parent partition must be empty")
    new_shape, j = swap_and_reduce_shape(tree.shape, i)
    phi = lambda e: frozenset((e - {i, j}) | ({i} if j in e else set()))
    tops = {a: x for a, x in tree.tops.items() if a not in (i, j)}
    if i != j:
        tops[i] = tree.tops[j]
    partitions = {phi(e): part for e, part in tree.partitions.items() if e != p}
    if len(new_shape.labels) == 1:
        only = next(iter(new_shape.labels))
        return KTree(new_shape, {only: tops.get(only, 0.0)}, {})
    return KTree(new_shape, tops, partitions)


def insert_label(
    tree: KTree,
    ref: BlockRef,
    j: int,
    unit_two_tree: Optional[tuple] = None,
) -> KTree:
    """Insert a fresh label j at a block.

    Leaf block i: the top x_i is replaced by the unit-mass 2-tree
    (y1, y2, gamma) scaled by x_i: label i keeps x_i*y1, label j gets x_i*y2,
    and the new parent edge {i, j} carries x_i*gamma.  Internal block: the
    partition splits around the block, whose mass becomes the new top x_j;
    the 2-tree argument is not used.
    """
    if j in tree.labels:
        raise ValueError(f"label {j} already present")
    if isinstance(ref, LeafRef):
        i = ref.label
        if i not in tree.labels:
            raise KeyError(f"leaf {i} not in tree")
        if unit_two_tree is None:
            raise ValueError("leaf insertion requires a unit-mass 2-tree (y1, y2, gamma)")
        y1, y2, gamma = unit_two_tree
        x = tree.tops[i]
        new_shape = _shape_insert(tree.shape, frozenset([i]), j)
        phi = lambda e: e | {j} if i in e else e
        tops = dict(tree.tops)
        tops[i] = x * y1
        tops[j] = x * y2
        partitions = {phi(e): p for e, p in tree.partitions.items()}
        partitions[frozenset([i, j])] = pscale(gamma, x) if x > 0 and len(gamma) else EMPTY
        return KTree(new_shape, tops, partitions)
    edge = frozenset(ref.edge)
    if edge not in tree.partitions:
        raise KeyError(f"edge {sorted(edge)} not in tree")
    part = tree.partitions[edge]
    if not 0 <= ref.index < len(part):
        raise KeyError(f"block index {ref.index} out of range on edge {sorted(edge)}")
    below, block, above = part.split_at(ref.index)
    new_shape = _shape_insert(tree.shape, edge, j)
    phi = lambda e: e | {j} if edge < e else e
    tops = dict(tree.tops)
    tops[j] = block
    partitions = {}
    for e, p in tree.partitions.items():
        if e == edge:
            continue
        partitions[phi(e)] = p
    partitions[edge] = below
    partitions[edge | {j}] = above
    return KTree(new_shape, tops, partitions)


def project_minus(tree: KTree, j: int) -> KTree:
    """Remove label j, merging its mass into the parent partition (type-1
    parent) or its sibling's top (type-2 parent).  Mass is preserved."""
    if j not in tree.labels:
        return tree
    if len(tree.labels) == 1:
        raise ValueError("cannot remove the last label")
    p = parent_edge(tree.shape, frozenset([j]))
    sib = sibling_edge(tree.shape, frozenset([j]))
    phi = lambda e: frozenset(e - {j})
    new_edges = frozenset(phi(e) for e in tree.shape.edges if e != p)
    new_shape = TreeShape(frozenset(tree.labels - {j}), new_edges)
    tops = {a: x for a, x in tree.tops.items() if a != j}
    partitions = {}
    if len(sib) == 1:
        # type-2 parent {a, j}: top a absorbs the whole compound
        a = min(sib)
        tops[a] = tree.tops[a] + tree.tops[j] + tree.partitions[p].mass
        for e, part in tree.partitions.items():
            if e != p:
                partitions[phi(e)] = part
    else:
        # type-1 parent: sibling partition * (top j) * parent partition
        x_j = tree.tops[j]
        middle = IntervalPartition([x_j]) if x_j > 0 else EMPTY
        merged = concat(tree.partitions[sib], middle, tree.partitions[p])
        for e, part in tree.partitions.items():
            if e in (p, sib):
                continue
            partitions[phi(e)] = part
        partitions[phi(sib)] = merged
    if len(new_shape.labels) == 1:
        only = next(iter(new_shape.labels))
        return KTree(new_shape, {only: tops[only]}, {})
    return KTree(new_shape, tops, partitions)


def project_to(tree: KTree, k: int) -> KTree:
    """Remove every label above k (iterated single-label projections)."""
    keep = {i for i in tree.labels if i <= k}
    if not keep:
        raise ValueError(f"no labels <= {k} to project onto")
    out = tree
    for j in sorted((i for i in tree.labels if i > k), reverse=True):
        out = project_minus(out, j)
    return out


def distance_to_zero(tree: KTree) -> float:
    """Sum of top masses plus, per edge, max(partition mass, diversity)."""
    total = sum(tree.tops.values())
    for e in tree.sorted_edges():
        part = tree.partitions[e]
        div, _ = diversity(part)
        total += max(part.mass, div)
    return total
