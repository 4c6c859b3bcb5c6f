"""Directed synaptic graph and the indegree/outdegree sub-graph algebra.

A :class:`DirectedGraph` stores edges as two parallel id arrays; the position
of an edge in those arrays is its identity, so multi-synapses survive every
set operation.  Sub-graphs are triplets ``(pre, post, edges)`` of sorted,
unique ``int64`` arrays referring back to the parent graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

Orientation = Literal["in", "out"]

_EMPTY = np.zeros(0, dtype=np.int64)


class GraphError(ValueError):
    pass


def as_id_set(ids: Iterable[int] | np.ndarray) -> np.ndarray:
    """Sorted unique int64 array from any iterable of ids."""
    if isinstance(ids, np.ndarray):
        arr = ids.astype(np.int64, copy=False).ravel()
    else:
        arr = np.fromiter((int(i) for i in ids), dtype=np.int64)
    return np.unique(arr)


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    n_vertices: int
    pre: np.ndarray
    post: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.pre.size)

    def edge_pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.pre.tolist(), self.post.tolist()))

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.post, minlength=self.n_vertices)

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.pre, minlength=self.n_vertices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DirectedGraph):
            return NotImplemented
        return (
            self.n_vertices == other.n_vertices
            and np.array_equal(self.pre, other.pre)
            and np.array_equal(self.post, other.post)
        )

    def __repr__(self) -> str:
        return f"DirectedGraph(n_vertices={self.n_vertices}, n_edges={self.n_edges})"


def build_graph(n_vertices: int, edges) -> DirectedGraph:
    """Build a graph from ``(pre, post)`` pairs or an ``(E, 2)`` array.

    Insertion order is preserved; self-loops and duplicate pairs are allowed.
    """
    if n_vertices < 0:
        raise GraphError(f"n_vertices must be non-negative, got {n_vertices}")
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError("edges must be a sequence of (pre, post) pairs")
    pre = np.ascontiguousarray(arr[:, 0])
    post = np.ascontiguousarray(arr[:, 1])
    for name, ids in (("pre", pre), ("post", post)):
        bad = np.flatnonzero((ids < 0) | (ids >= n_vertices))
        if bad.size:
            i = int(bad[0])
            raise GraphError(f"edge {i}: {name} id {int(ids[i])} ≥ {n_vertices}"
                             if ids[i] >= n_vertices
                             else f"edge {i}: {name} id {int(ids[i])} < 0")
    return DirectedGraph(int(n_vertices), pre, post)


@dataclass(frozen=True, eq=False)
class SubGraph:
    """Indegree (``orientation='in'``) or outdegree sub-graph of ``graph``."""

    graph: DirectedGraph
    orientation: Orientation
    pre: np.ndarray
    post: np.ndarray
    edges: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SubGraph):
            return NotImplemented
        return (
            self.graph is other.graph
            and self.orientation == other.orientation
            and np.array_equal(self.pre, other.pre)
            and np.array_equal(self.post, other.post)
            and np.array_equal(self.edges, other.edges)
        )

    def as_sets(self) -> tuple[set[int], set[int], set[int]]:
        return set(self.pre.tolist()), set(self.post.tolist()), set(self.edges.tolist())

    def edge_pairs(self) -> list[tuple[int, int]]:
        g = self.graph
        return [(int(g.pre[e]), int(g.post[e])) for e in self.edges]

    def is_empty(self) -> bool:
        return self.pre.size == 0 and self.post.size == 0 and self.edges.size == 0

    def __repr__(self) -> str:
        return (f"SubGraph({self.orientation}, n_pre={self.pre.size}, "
                f"n_post={self.post.size}, n_edges={self.edges.size})")


# Type aliases kept for readability at call sites.
IndegreeSubGraph = SubGraph
OutdegreeSubGraph = SubGraph


def _check_ids(g: DirectedGraph, ids: np.ndarray) -> None:
    if ids.size and (ids[0] < 0 or ids[-1] >= g.n_vertices):
        raise GraphError(f"vertex ids must lie in [0, {g.n_vertices})")


def indegree_subgraph(g: DirectedGraph, v_tilde) -> SubGraph:
    """All edges terminating in ``v_tilde`` together with their sources.

    The post set is ``v_tilde`` itself, including vertices without incoming
    edges.
    """
    sel = as_id_set(v_tilde)
    _check_ids(g, sel)
    edges = np.flatnonzero(np.isin(g.post, sel)).astype(np.int64)
    pre = np.unique(g.pre[edges])
    return SubGraph(g, "in", pre, sel, edges)


def outdegree_subgraph(g: DirectedGraph, v_tilde) -> SubGraph:
    sel = as_id_set(v_tilde)
    _check_ids(g, sel)
    edges = np.flatnonzero(np.isin(g.pre, sel)).astype(np.int64)
    post = np.unique(g.post[edges])
    return SubGraph(g, "out", sel, post, edges)


def _binary(a: SubGraph, b: SubGraph, op) -> SubGraph:
    if a.graph is not b.graph:
        raise GraphError("sub-graphs belong to different parent graphs")
    if a.orientation != b.orientation:
        raise GraphError(
            f"cannot combine {a.orientation}degree and {b.orientation}degree sub-graphs")
    return SubGraph(a.graph, a.orientation, op(a.pre, b.pre), op(a.post, b.post),
                    op(a.edges, b.edges))


def subgraph_meet(a: SubGraph, b: SubGraph) -> SubGraph:
    """Componentwise intersection."""
    return _binary(a, b, lambda x, y: np.intersect1d(x, y, assume_unique=True))


def subgraph_join(a: SubGraph, b: SubGraph) -> SubGraph:
    """Componentwise union."""
    return _binary(a, b, np.union1d)


def spiking_subgraph(s: SubGraph, spikes) -> SubGraph:
    """Restrict ``s`` to the edges whose source spiked."""
    spk = as_id_set(spikes)
    g = s.graph
    keep = s.edges[np.isin(g.pre[s.edges], spk)]
    pre = np.intersect1d(spk, s.pre, assume_unique=True)
    post = np.unique(g.post[keep])
    return SubGraph(g, s.orientation, pre, post, keep)


def split_local_remote(s: SubGraph, owned) -> tuple[SubGraph, SubGraph]:
    """Split an indegree sub-graph by whether each edge's source is owned.

    Returns ``(local, remote)``.  ``remote.pre`` never intersects ``owned``,
    and ``subgraph_join(local, remote) == s``.
    """
    own = as_id_set(owned)
    if s.orientation != "in":
        raise GraphError("local/remote split is defined for indegree sub-graphs only")
    if not np.array_equal(s.post, own):
        raise GraphError("sub-graph post set must equal the owned vertex set")
    g = s.graph
    is_local = np.isin(g.pre[s.edges], own)
    loc_e = s.edges[is_local]
    rem_e = s.edges[~is_local]
    local = SubGraph(g, "in", np.unique(g.pre[loc_e]), own, loc_e)
    remote = SubGraph(g, "in", np.unique(g.pre[rem_e]), own, rem_e)
    return local, remote


# --- edge-list text format -------------------------------------------------

def dump_edge_list(g: DirectedGraph, path: str | Path) -> None:
    lines = [f"# n_vertices {g.n_vertices}"]
    lines += [f"{a} {b}" for a, b in zip(g.pre.tolist(), g.post.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_edge_list(path: str | Path) -> DirectedGraph:
    """Read ``pre post`` lines; ``#`` starts a comment.

    A ``# n_vertices N`` header fixes the vertex count, otherwise it is
    ``max id + 1``.
    """
    n_vertices = None
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        body, _, comment = raw.partition("#")
        words = comment.split()
        if len(words) == 2 and words[0] == "n_vertices":
            n_vertices = int(words[1])
        fields = body.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise GraphError(f"line {lineno}: expected 'pre post', got {raw!r}")
        try:
            pairs.append((int(fields[0]), int(fields[1])))
        except ValueError:
            raise GraphError(f"line {lineno}: non-integer vertex id in {raw!r}") from None
    if n_vertices is None:
        n_vertices = 1 + max((max(p) for p in pairs), default=-1)
    return build_graph(n_vertices, pairs)
