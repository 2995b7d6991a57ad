"""
Areal maps as ordered graphs.

Regions are indexed ``0..k-1`` in declaration order; that order is the
DAGAR ordering and never changes after construction.  Edges are stored as
unordered pairs ``(a, b)`` with ``a < b``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import (
    AdjacencyFormatError,
    DuplicateEdgeError,
    EmptyGraphError,
    SelfLoopError,
    UnknownLabelError,
)


@dataclass(frozen=True, eq=False)
class DirectedNeighborSets:
    """Earlier-ordered neighbours ``N(j) = {j' < j : j' ~ j}`` of every region."""

    neighbors: tuple[tuple[int, ...], ...]
    n_before: np.ndarray
    lower: sp.csr_matrix  # lower[j, j'] = 1 iff j' in N(j)
    src: np.ndarray = None  # directed edge list j' -> j with j' in N(j)
    dst: np.ndarray = None

    @property
    def k(self) -> int:
        return len(self.neighbors)


@dataclass(frozen=True, eq=False)
class ArealGraph:
    labels: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        k = len(self.labels)
        if k == 0:
            raise EmptyGraphError("graph has no regions")
        if len(set(self.labels)) != k:
            dup = sorted({x for x in self.labels if self.labels.count(x) > 1})
            raise AdjacencyFormatError(f"duplicate region labels: {dup}")
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < k and 0 <= b < k):
                raise UnknownLabelError(f"edge ({a}, {b}) has an index outside [0, {k})")
            if a == b:
                raise SelfLoopError(f"self-loop on region {self.labels[a]!r}")
            if a > b:
                raise ValueError("edges must be stored as (a, b) with a < b")
            if (a, b) in seen:
                raise DuplicateEdgeError(
                    f"duplicate edge {self.labels[a]!r}-{self.labels[b]!r}")
            seen.add((a, b))

    @classmethod
    def from_pairs(cls, labels, pairs) -> "ArealGraph":
        """Build from index pairs in either orientation; rejects repeats."""
        edges = []
        for a, b in pairs:
            a, b = int(a), int(b)
            if a == b:
                raise SelfLoopError(f"self-loop on region index {a}")
            edges.append((min(a, b), max(a, b)))
        return cls(tuple(str(x) for x in labels), tuple(edges))

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def index(self) -> dict[str, int]:
        return {lab: j for j, lab in enumerate(self.labels)}

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency matrix ``M`` (sparse)."""
        k = self.k
        if not self.edges:
            return sp.csr_matrix((k, k))
        e = np.asarray(self.edges)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(k, k))
        m.sort_indices()
        return m

    def adjacency_dense(self) -> np.ndarray:
        return self.adjacency.toarray()

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(int)

    def n_components(self) -> int:
        n, _ = csgraph.connected_components(self.adjacency, directed=False)
        return int(n)

    def reorder(self, perm) -> "ArealGraph":
        """Graph with region ``perm[n]`` moved to position ``n``."""
        perm = [int(p) for p in perm]
        if sorted(perm) != list(range(self.k)):
            raise ValueError("perm must be a permutation of range(k)")
        new_pos = {old: new for new, old in enumerate(perm)}
        pairs = [(new_pos[a], new_pos[b]) for a, b in self.edges]
        return ArealGraph.from_pairs([self.labels[p] for p in perm], pairs)


def directed_neighbor_sets(g: ArealGraph) -> DirectedNeighborSets:
    nbrs = [[] for _ in range(g.k)]
    for a, b in g.edges:
        nbrs[b].append(a)  # a < b, so a precedes b
    neighbors = tuple(tuple(sorted(n)) for n in nbrs)
    n_before = np.array([len(n) for n in neighbors], dtype=int)
    lower = sp.tril(g.adjacency, k=-1, format="csr")
    lower.sort_indices()
    coo = lower.tocoo()
    return DirectedNeighborSets(neighbors, n_before, lower,
                                coo.col.astype(np.intp), coo.row.astype(np.intp))


def grid_graph(rows: int, cols: int, drop=()) -> ArealGraph:
    """Rook-adjacency lattice in row-major order.

    ``drop`` lists ``(r, c)`` cells (0-based) to remove, e.g. ``[(6, 6)]``
    for a 7x7 grid missing one corner.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {rows}x{cols}")
    dropped = {(int(r), int(c)) for r, c in drop}
    cells = [(r, c) for r in range(rows) for c in range(cols) if (r, c) not in dropped]
    if not cells:
        raise EmptyGraphError("every grid cell was dropped")
    pos = {cell: n for n, cell in enumerate(cells)}
    pairs = []
    for (r, c), n in pos.items():
        for nb in ((r, c + 1), (r + 1, c)):
            if nb in pos:
                pairs.append((n, pos[nb]))
    labels = [f"R{r + 1}C{c + 1}" for r, c in cells]
    return ArealGraph.from_pairs(labels, pairs)


def grid_coordinates(rows: int, cols: int, drop=()) -> np.ndarray:
    """Unit-spaced planar coordinates matching :func:`grid_graph` ordering."""
    dropped = {(int(r), int(c)) for r, c in drop}
    return np.array([(float(c), float(r)) for r in range(rows) for c in range(cols)
                     if (r, c) not in dropped])


def load_adjacency(source) -> ArealGraph:
    """Parse an adjacency edge-list file.

    Format::

        # comment
        regions: A,B,C
        A,B
        B,C

    The ``regions:`` line fixes the region order.
    """
    text = Path(source).read_text(encoding="utf-8")
    labels = None
    pairs = []
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if labels is None:
            if not line.lower().startswith("regions:"):
                raise AdjacencyFormatError(
                    f"line {lineno}: expected 'regions: <labels>' header")
            labels = [s.strip() for s in line.split(":", 1)[1].split(",") if s.strip()]
            if not labels:
                raise EmptyGraphError(f"line {lineno}: no regions declared")
            if len(set(labels)) != len(labels):
                raise AdjacencyFormatError(f"line {lineno}: duplicate region labels")
            index = {lab: j for j, lab in enumerate(labels)}
            continue
        parts = [s.strip() for s in line.split(",")]
        if len(parts) != 2 or not all(parts):
            raise AdjacencyFormatError(f"line {lineno}: expected '<labelA>,<labelB>'")
        a, b = parts
        for lab in (a, b):
            if lab not in index:
                raise UnknownLabelError(f"line {lineno}: unknown region label {lab!r}")
        if a == b:
            raise SelfLoopError(f"line {lineno}: self-loop on {a!r}")
        key = frozenset((a, b))
        if key in seen:
            raise DuplicateEdgeError(
                f"line {lineno}: duplicate edge {a!r}-{b!r} (first on line {seen[key]})")
        seen[key] = lineno
        pairs.append((index[a], index[b]))
    if labels is None:
        raise EmptyGraphError("adjacency file declares no regions")
    g = ArealGraph.from_pairs(labels, pairs)
    if g.k > 1 and g.n_components() > 1:
        warnings.warn(f"adjacency graph has {g.n_components()} connected components",
                      stacklevel=2)
    return g


def write_adjacency(g: ArealGraph, path) -> None:
    lines = ["regions: " + ",".join(g.labels)]
    lines += [f"{g.labels[a]},{g.labels[b]}" for a, b in g.edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
