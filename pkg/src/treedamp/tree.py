"""Temporal trees with a global time-proportional delay.

Edges are stored 0-based in canonical order: the root edge first, then the
edges ending at internal vertices (parents before children), then the
boundary edges.  ``parent[j]`` is the 0-based index of the edge whose terminal
vertex edge ``j`` leaves, or ``-1`` for the root edge.  ``children[j]`` lists
the edges leaving the terminal vertex of edge ``j``.

On edge ``j`` with local time ``t`` the delayed argument is

    q_j(t) = (t - (q - 1) * entry_time[j]) / q

which is the same point as global time ``(entry_time[j] + t) / q``.  When
``q_j(t) < 0`` the point lies on the parent edge at local time
``q_j(t) + length[parent]``.
"""

import heapq
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    CycleOrDisconnected,
    FeasibilityViolated,
    InvalidQ,
    MultipleRoots,
    NoHistory,
    NonpositiveLength,
    OutOfRange,
    ValidationError,
)

__all__ = [
    "TemporalTree",
    "build_tree",
    "delay_map",
    "inverse_delay",
    "active_length",
]


@dataclass(frozen=True, eq=False)
class TemporalTree:
    parent: np.ndarray
    length: np.ndarray
    q: float
    labels: tuple
    entry_time: np.ndarray
    children: tuple
    # (q - 1) * entry_time, the local time at which the delay leaves the parent
    crossing: np.ndarray
    # q_j(T_j); start of the equilibrium interval on boundary edges
    target: np.ndarray

    @property
    def m(self):
        return len(self.length)

    @cached_property
    def internal(self):
        return np.array([len(c) > 0 for c in self.children], dtype=bool)

    @property
    def internal_count(self):
        return int(self.internal.sum())

    @property
    def d(self):
        return self.internal_count

    def is_internal(self, j):
        return bool(self.internal[j])

    @cached_property
    def index_of(self):
        """Original label -> canonical 0-based edge index."""
        return {lab: j for j, lab in enumerate(self.labels)}

    def path_to_root(self, j):
        path = [j]
        while self.parent[path[-1]] >= 0:
            path.append(int(self.parent[path[-1]]))
        return path

    def is_chain(self):
        return all(len(c) <= 1 for c in self.children)

    def delay(self, j, t):
        """Vectorized :func:`delay_map` without range checks.

        Returns ``(edge, local_time)`` arrays.
        """
        t = np.asarray(t, dtype=float)
        s = (t - self.crossing[j]) / self.q
        edge = np.full(t.shape, j, dtype=int)
        below = s < 0
        if np.any(below):
            k = self.parent[j]
            if k < 0:
                raise NoHistory(f"edge {self.labels[j]!r} needs history before the root")
            s = np.where(below, s + self.length[k], s)
            edge[below] = k
        return edge, s

    def global_time(self, j, t):
        return self.entry_time[j] + np.asarray(t, dtype=float)


def _canonical_order(parent, internal):
    """Internal edges in topological order (stable w.r.t. input order), then boundary edges."""
    m = len(parent)
    kids = [[] for _ in range(m)]
    root = None
    for j, k in enumerate(parent):
        if k < 0:
            root = j
        else:
            kids[k].append(j)
    order = []
    heap = [root]
    while heap:
        j = heapq.heappop(heap)
        order.append(j)
        for c in kids[j]:
            if internal[c]:
                heapq.heappush(heap, c)
    if not internal[root]:
        return [root] + [j for j in range(m) if j != root]
    order += [j for j in range(m) if not internal[j]]
    return order


def build_tree(parents, lengths, q, labels=None):
    """Build and validate a temporal tree.

    ``parents[i]`` is 0 for the root edge and otherwise the label of the edge
    whose terminal vertex edge ``i`` leaves.  Labels default to ``1..m``, so
    ``build_tree([0, 1, 1], [1, 3, 3], 2)`` is a star with two outgoing edges.
    """
    parents = list(parents)
    lengths = np.asarray(lengths, dtype=float)
    m = len(parents)
    if m == 0 or lengths.ndim != 1 or len(lengths) != m:
        raise ValidationError("parents and lengths must be nonempty and of equal count")
    if not np.isfinite(q) or q <= 1:
        raise InvalidQ(f"contraction factor must satisfy q > 1, got q={q}")
    if labels is None:
        labels = tuple(range(1, m + 1))
    else:
        labels = tuple(labels)
        if len(labels) != m or len(set(labels)) != m:
            raise ValidationError("edge labels must be unique, one per edge")
        if 0 in labels:
            raise ValidationError("label 0 is reserved for the root vertex")
    for i, T in enumerate(lengths):
        if not np.isfinite(T) or T <= 0:
            raise NonpositiveLength(f"edge {labels[i]!r} has length {T}; lengths must be > 0")

    pos = {lab: i for i, lab in enumerate(labels)}
    roots = [i for i, p in enumerate(parents) if p == 0]
    if len(roots) > 1:
        raise MultipleRoots(
            "more than one root edge: " + ", ".join(repr(labels[i]) for i in roots)
        )
    if not roots:
        raise CycleOrDisconnected("no root edge (parent_vertex 0); parent relation has a cycle")
    par = np.empty(m, dtype=int)
    for i, p in enumerate(parents):
        if p == 0:
            par[i] = -1
        elif p in pos:
            par[i] = pos[p]
        else:
            raise CycleOrDisconnected(f"edge {labels[i]!r} leaves unknown edge {p!r}")

    # every edge must reach the root without revisiting an edge
    depth = np.full(m, -1)
    depth[roots[0]] = 0
    for i in range(m):
        path = []
        j = i
        while depth[j] < 0:
            if j in path:
                raise CycleOrDisconnected(
                    "parent relation has a cycle through edges "
                    + ", ".join(repr(labels[k]) for k in path)
                )
            path.append(j)
            j = par[j]
        for k in reversed(path):
            depth[k] = depth[par[k]] + 1

    has_kids = np.zeros(m, dtype=bool)
    has_kids[par[par >= 0]] = True
    order = _canonical_order(par, has_kids)
    new_index = np.empty(m, dtype=int)
    new_index[order] = np.arange(m)
    parent = np.array([-1 if par[i] < 0 else new_index[par[i]] for i in order], dtype=int)
    length = lengths[order].copy()
    labels = tuple(labels[i] for i in order)

    entry = np.zeros(m)
    for j in range(1, m):  # parents precede children in canonical order
        k = parent[j]
        entry[j] = entry[k] + length[k]
    children = tuple(tuple(int(c) for c in np.flatnonzero(parent == j)) for j in range(m))

    q = float(q)
    crossing = (q - 1.0) * entry
    for j in range(1, m):
        if not length[j] > crossing[j]:
            raise FeasibilityViolated(
                f"edge {labels[j]!r}: length {length[j]:g} must exceed "
                f"(q-1)*entry_time = {crossing[j]:g}",
                edge=labels[j],
            )
    target = (length - crossing) / q
    for a in (parent, length, entry, crossing, target):
        a.setflags(write=False)
    return TemporalTree(
        parent=parent,
        length=length,
        q=q,
        labels=labels,
        entry_time=entry,
        children=children,
        crossing=crossing,
        target=target,
    )


def delay_map(tree, j, t):
    """Locate the delayed point ``q_j(t)`` of edge ``j``.

    Returns ``(edge, local_time)``; for ``q_j(t) < 0`` the point is on the
    parent edge.
    """
    T = tree.length[j]
    if not 0.0 <= t <= T:
        raise OutOfRange(f"t={t} outside [0, {T}] on edge {tree.labels[j]!r}")
    s = (t - tree.crossing[j]) / tree.q
    if s >= 0:
        return j, float(s)
    k = int(tree.parent[j])
    if k < 0:
        raise NoHistory(f"edge {tree.labels[j]!r} needs history before the root")
    s += tree.length[k]
    if s < 0:
        # only reachable for an infeasible tree
        raise NoHistory(f"delay of edge {tree.labels[j]!r} reaches above its parent")
    return k, float(s)


def inverse_delay(tree, j, t):
    return tree.q * t + tree.crossing[j]


def active_length(tree, j):
    """``T_j`` on internal edges, ``q_j(T_j)`` on boundary edges."""
    if tree.internal[j]:
        return float(tree.length[j])
    return float(tree.target[j])
