"""Typed heterogeneous graph, meta-path composition and schema neighborhoods."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class HinValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    name: str
    src_type: str
    dst_type: str


@dataclass
class Hin:
    """Heterogeneous graph with per-type dense node indices.

    ``edges[rel]`` is an ``(E, 2)`` integer array of ``(src_index, dst_index)``
    pairs, each index local to the relation's declared endpoint type.
    """

    node_counts: dict[str, int]
    relations: list[Relation]
    edges: dict[str, np.ndarray]
    target_type: str

    def __post_init__(self):
        self.node_counts = {t: int(n) for t, n in self.node_counts.items()}
        names = [r.name for r in self.relations]
        if len(set(names)) != len(names):
            raise HinValidationError(f"duplicate relation names in {names}")
        if len(self.node_counts) + len(self.relations) <= 2:
            raise HinValidationError("a heterogeneous network needs |types| + |relations| > 2")
        if self.target_type not in self.node_counts:
            raise HinValidationError(f"target type {self.target_type!r} is not a node type")
        for rel in self.relations:
            for t in (rel.src_type, rel.dst_type):
                if t not in self.node_counts:
                    raise HinValidationError(f"relation {rel.name!r} uses unknown type {t!r}")
            e = np.asarray(self.edges.get(rel.name, np.zeros((0, 2))), dtype=np.int64).reshape(-1, 2)
            if e.size:
                if e.min() < 0:
                    raise HinValidationError(f"relation {rel.name!r} has a negative index")
                if e[:, 0].max() >= self.node_counts[rel.src_type]:
                    raise HinValidationError(
                        f"relation {rel.name!r}: source index {e[:, 0].max()} >= "
                        f"{self.node_counts[rel.src_type]} {rel.src_type} nodes"
                    )
                if e[:, 1].max() >= self.node_counts[rel.dst_type]:
                    raise HinValidationError(
                        f"relation {rel.name!r}: destination index {e[:, 1].max()} >= "
                        f"{self.node_counts[rel.dst_type]} {rel.dst_type} nodes"
                    )
            self.edges[rel.name] = e
        self._rel = {r.name: r for r in self.relations}

    @property
    def node_types(self) -> list[str]:
        return list(self.node_counts)

    @property
    def num_targets(self) -> int:
        return self.node_counts[self.target_type]

    def relation(self, name: str) -> Relation:
        try:
            return self._rel[name]
        except KeyError:
            raise HinValidationError(f"unknown relation {name!r}") from None

    def type_offsets(self) -> dict[str, int]:
        """Offset of each type's block in the global node numbering (type order)."""
        offsets, acc = {}, 0
        for t, n in self.node_counts.items():
            offsets[t] = acc
            acc += n
        return offsets

    @property
    def num_nodes(self) -> int:
        return sum(self.node_counts.values())

    def biadjacency(self, name: str, reverse: bool = False) -> sp.csr_matrix:
        rel = self.relation(name)
        e = self.edges[name]
        shape = (self.node_counts[rel.src_type], self.node_counts[rel.dst_type])
        m = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=shape)
        m.data[:] = 1.0
        return (m.T.tocsr() if reverse else m)


@dataclass(frozen=True)
class MetaPath:
    """A relation sequence; each step is ``(relation_name, reversed)``."""

    name: str
    steps: tuple[tuple[str, bool], ...]

    def validate(self, hin: Hin) -> None:
        if not self.steps:
            raise HinValidationError(f"meta-path {self.name!r} has no steps")
        current = hin.target_type
        for i, (rel_name, rev) in enumerate(self.steps):
            rel = hin.relation(rel_name)
            src, dst = (rel.dst_type, rel.src_type) if rev else (rel.src_type, rel.dst_type)
            if src != current:
                raise HinValidationError(
                    f"meta-path {self.name!r} step {i} ({'~' if rev else ''}{rel_name}): "
                    f"expects source type {src!r} but path is at {current!r}"
                )
            current = dst
        if current != hin.target_type:
            raise HinValidationError(
                f"meta-path {self.name!r} ends at {current!r}, not target type {hin.target_type!r}"
            )

    def is_palindromic(self) -> bool:
        flipped = tuple((r, not rev) for r, rev in reversed(self.steps))
        return flipped == self.steps

    def spec(self) -> str:
        return " ".join(("~" if rev else "") + r for r, rev in self.steps)

    @classmethod
    def parse(cls, name: str, spec: str) -> "MetaPath":
        steps = []
        for tok in spec.split():
            steps.append((tok[1:], True) if tok.startswith("~") else (tok, False))
        return cls(name, tuple(steps))


@dataclass
class MetaPathAdjacency:
    """CSR neighbor sets: row v lists the sorted, deduplicated N^P_v (self excluded)."""

    name: str
    indptr: np.ndarray
    indices: np.ndarray
    n: int

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    @property
    def num_edges(self) -> int:
        return int(self.indptr[-1])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def dst(self) -> np.ndarray:
        """Destination node of every stored entry, aligned with ``indices``."""
        return np.repeat(np.arange(self.n), self.degrees())

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((np.ones(self.num_edges), self.indices, self.indptr), shape=(self.n, self.n))

    @classmethod
    def from_matrix(cls, name: str, m: sp.spmatrix) -> "MetaPathAdjacency":
        m = sp.csr_matrix(m, dtype=np.float64)
        m = sp.csr_matrix(m - sp.diags(m.diagonal()))
        m.eliminate_zeros()
        m.sum_duplicates()
        m.sort_indices()
        return cls(name, m.indptr.astype(np.int64), m.indices.astype(np.int64), m.shape[0])


def compose_metapath_adjacency(hin: Hin, mp: MetaPath) -> MetaPathAdjacency:
    """Target-to-target reachability along ``mp`` with set semantics."""
    mp.validate(hin)
    reach = None
    for rel_name, rev in mp.steps:
        step = hin.biadjacency(rel_name, reverse=rev)
        reach = step if reach is None else reach @ step
        reach = reach.tocsr()
        reach.data[:] = 1.0
    return MetaPathAdjacency.from_matrix(mp.name, reach)


def schema_tree(hin: Hin) -> list[tuple[str, str, str, bool]]:
    """Breadth-first spanning tree of the schema rooted at the target type.

    Returns ``(parent_type, child_type, relation, reversed)`` edges in visit
    order; the target type is never re-entered.
    """
    visited = {hin.target_type}
    order: list[tuple[str, str, str, bool]] = []
    queue = deque([hin.target_type])
    while queue:
        t = queue.popleft()
        for rel in hin.relations:
            for rev in (False, True):
                src, dst = (rel.dst_type, rel.src_type) if rev else (rel.src_type, rel.dst_type)
                if src == t and dst not in visited:
                    visited.add(dst)
                    order.append((t, dst, rel.name, rev))
                    queue.append(dst)
    return order


@dataclass
class SchemaNeighborhood:
    """Per target node, the non-target nodes sharing a schema instance with it.

    Stored as CSR over the global node numbering of ``Hin.type_offsets``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    n_targets: int
    n_nodes: int

    def members(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)


def schema_neighbors(hin: Hin) -> SchemaNeighborhood:
    offsets = hin.type_offsets()
    nt = hin.num_targets
    reach: dict[str, sp.csr_matrix] = {hin.target_type: sp.identity(nt, format="csr")}
    blocks = []
    for parent, child, rel, rev in schema_tree(hin):
        m = (reach[parent] @ hin.biadjacency(rel, reverse=rev)).tocsr()
        m.data[:] = 1.0
        reach[child] = m
        # shift into global numbering
        blocks.append(sp.csr_matrix((m.data, m.indices + offsets[child], m.indptr),
                                    shape=(nt, hin.num_nodes)))
    if blocks:
        full = blocks[0]
        for b in blocks[1:]:
            full = full + b
        full = sp.csr_matrix(full)
    else:
        full = sp.csr_matrix((nt, hin.num_nodes))
    full.eliminate_zeros()
    full.sum_duplicates()
    full.sort_indices()
    return SchemaNeighborhood(full.indptr.astype(np.int64), full.indices.astype(np.int64),
                              nt, hin.num_nodes)


def union_adjacency(adjs: list[MetaPathAdjacency]) -> sp.csr_matrix:
    """Undirected union graph over all meta-path adjacencies."""
    n = adjs[0].n
    m = sp.csr_matrix((n, n))
    for a in adjs:
        c = a.to_csr()
        m = m + c + c.T
    m = sp.csr_matrix(m)
    m.data[:] = 1.0
    m = sp.csr_matrix(m - sp.diags(m.diagonal()))
    m.eliminate_zeros()
    m.sort_indices()
    return m


def bfs_distances(union: sp.csr_matrix, sources) -> np.ndarray:
    """Hop distance from every node to the nearest source; ``inf`` if unreachable."""
    n = union.shape[0]
    dist = np.full(n, np.inf)
    frontier = np.unique(np.asarray(list(sources), dtype=np.int64))
    dist[frontier] = 0
    d = 0
    while frontier.size:
        d += 1
        nxt = np.unique(union[frontier].indices) if frontier.size else frontier
        nxt = nxt[np.isinf(dist[nxt])]
        dist[nxt] = d
        frontier = nxt
    return dist


def hop_distance(union: sp.csr_matrix, source_set, v: int) -> float:
    return float(bfs_distances(union, source_set)[v])
