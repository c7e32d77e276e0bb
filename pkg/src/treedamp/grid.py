"""Meshes, piecewise-linear functions on a tree and constrained DOF layouts."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import MeshMismatch, OutOfRange
from .tree import TemporalTree

__all__ = [
    "Mesh",
    "TreeFunction",
    "StepFunction",
    "DofLayout",
    "build_mesh",
    "mesh_from_nodes",
    "build_dof_layout",
    "h1_norm",
    "l2_norm_sq",
]

# 2-point Gauss-Legendre on [0, 1]
_GAUSS_X = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS_W = np.array([0.5, 0.5])


def _merge_close(points, tol):
    points = np.sort(np.asarray(points, dtype=float))
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.diff(points) > tol
    return points[keep]


@dataclass(frozen=True, eq=False)
class Mesh:
    tree: TemporalTree
    nodes: tuple
    h: float
    # node index of (q-1)*entry_time on each edge, None when it is not interior
    crossing_index: tuple
    # node index of q_j(T_j); always interior
    target_index: tuple

    @property
    def m(self):
        return self.tree.m

    @cached_property
    def offsets(self):
        return np.concatenate([[0], np.cumsum([len(x) for x in self.nodes])])

    @property
    def node_count(self):
        return int(self.offsets[-1])

    def cells(self, j):
        return np.diff(self.nodes[j])

    def midpoints(self, j):
        x = self.nodes[j]
        return 0.5 * (x[:-1] + x[1:])

    @cached_property
    def breakpoints(self):
        """Per-edge subdivision on which every ``ell_j`` of a mesh function is linear.

        Besides the edge's own nodes this contains the preimages, under the
        delay, of the nodes of the edge itself and of the parent edge, so the
        delayed read of a mesh function is linear on every subcell.
        """
        tree = self.tree
        out = []
        for j in range(self.m):
            T = tree.length[j]
            c = tree.crossing[j]
            pts = [self.nodes[j], tree.q * self.nodes[j] + c]
            k = tree.parent[j]
            if k >= 0:
                pts.append(tree.q * (self.nodes[k] - tree.length[k]) + c)
                pts.append([c])
            pts = np.concatenate(pts)
            pts = pts[(pts > 0) & (pts < T)]
            out.append(_merge_close(np.concatenate([[0.0], pts, [T]]), 1e-13 * max(1.0, T)))
        return tuple(out)

    @cached_property
    def quadrature(self):
        """Per-edge 2-point Gauss rule on :attr:`breakpoints`; exact for the
        piecewise quadratic integrands ``ell_j y * ell_j w``."""
        rules = []
        for brk in self.breakpoints:
            a = brk[:-1]
            d = np.diff(brk)
            t = (a[:, None] + d[:, None] * _GAUSS_X[None, :]).ravel()
            w = (d[:, None] * _GAUSS_W[None, :]).ravel()
            rules.append((t, w))
        return tuple(rules)

    def locate(self, j, t):
        """Cell index and barycentric weight of ``t`` on edge ``j``."""
        x = self.nodes[j]
        i = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
        theta = (np.asarray(t) - x[i]) / (x[i + 1] - x[i])
        return i, theta

    def check(self, f):
        if f.mesh is not self:
            raise MeshMismatch("function lives on a different mesh")

    def zeros(self):
        return TreeFunction(self, [np.zeros_like(x) for x in self.nodes])


def _mandatory_points(tree, j):
    T = tree.length[j]
    pts = [p for p in (tree.crossing[j], tree.target[j]) if 0.0 < p < T]
    return _merge_close(pts, 1e-12 * max(1.0, T))


def _snap_indices(tree, j, x):
    """Force the mandatory points onto exact nodes; returns their indices."""
    T = tree.length[j]

    def find(p):
        if not 0.0 < p < T:
            return None
        i = int(np.argmin(np.abs(x - p)))
        if abs(x[i] - p) > 1e-12 * max(1.0, T):
            raise ValueError(f"mandatory node {p} missing on edge {tree.labels[j]!r}")
        return i

    ic = find(tree.crossing[j])
    it = find(tree.target[j])
    if ic is not None:
        x[ic] = tree.crossing[j]
    x[it] = tree.target[j]
    return ic, it


def build_mesh(tree, h):
    """Quasi-uniform per-edge grids with spacing <= h.

    The delay crossing point ``(q-1)*entry_time`` and ``q_j(T_j)`` are exact
    nodes on every edge; each segment between them is split uniformly.
    """
    if not h > 0:
        raise ValueError(f"mesh spacing must be positive, got {h}")
    nodes, ic, it = [], [], []
    for j in range(tree.m):
        T = float(tree.length[j])
        seg = np.concatenate([[0.0], _mandatory_points(tree, j), [T]])
        parts = []
        for a, b in zip(seg[:-1], seg[1:]):
            n = max(1, int(np.ceil((b - a) / h - 1e-9)))
            parts.append(np.linspace(a, b, n + 1)[:-1])
        x = np.concatenate(parts + [[T]])
        c, t = _snap_indices(tree, j, x)
        x.setflags(write=False)
        nodes.append(x)
        ic.append(c)
        it.append(t)
    return Mesh(tree, tuple(nodes), float(h), tuple(ic), tuple(it))


def mesh_from_nodes(tree, nodes):
    """Mesh with caller-supplied per-edge nodes; mandatory nodes are inserted if absent."""
    if len(nodes) != tree.m:
        raise MeshMismatch(f"expected node arrays for {tree.m} edges, got {len(nodes)}")
    out, ic, it = [], [], []
    hmax = 0.0
    for j, x in enumerate(nodes):
        T = float(tree.length[j])
        x = np.asarray(x, dtype=float)
        if np.any(np.diff(x) <= 0) or x[0] != 0.0 or abs(x[-1] - T) > 1e-12 * max(1.0, T):
            raise MeshMismatch(f"nodes on edge {tree.labels[j]!r} must increase from 0 to {T}")
        tol = 1e-12 * max(1.0, T)
        pts = [x]
        for p in _mandatory_points(tree, j):
            if np.min(np.abs(x - p)) > tol:
                pts.append([p])
        x = _merge_close(np.concatenate(pts), tol)
        x[-1] = T
        c, t = _snap_indices(tree, j, x)
        x.setflags(write=False)
        hmax = max(hmax, float(np.max(np.diff(x))))
        out.append(x)
        ic.append(c)
        it.append(t)
    return Mesh(tree, tuple(out), hmax, tuple(ic), tuple(it))


def _check_range(mesh, j, t):
    T = mesh.tree.length[j]
    t = np.asarray(t, dtype=float)
    tol = 1e-12 * max(1.0, T)
    if np.any(t < -tol) or np.any(t > T + tol):
        raise OutOfRange(f"t outside [0, {T}] on edge {mesh.tree.labels[j]!r}")
    return np.clip(t, 0.0, T)


@dataclass(eq=False)
class TreeFunction:
    """Continuous piecewise-linear function, one value array per edge."""

    mesh: Mesh
    values: list

    def __post_init__(self):
        vals = [np.asarray(v, dtype=float).copy() for v in self.values]
        if len(vals) != self.mesh.m or any(v.shape != x.shape for v, x in zip(vals, self.mesh.nodes)):
            raise MeshMismatch("value arrays do not match the mesh")
        self.values = vals

    @property
    def tree(self):
        return self.mesh.tree

    def eval(self, j, t):
        """Linear interpolation on edge ``j``; exact at nodes."""
        t = _check_range(self.mesh, j, t)
        out = np.interp(t, self.mesh.nodes[j], self.values[j])
        return float(out) if out.ndim == 0 else out

    def eval_delayed(self, j, t):
        """``y_j(q_j(t))``, reading the parent edge where ``q_j(t) < 0``."""
        t = _check_range(self.mesh, j, t)
        edge, s = self.tree.delay(j, t)
        out = np.empty(s.shape)
        for e in np.unique(edge):
            sel = edge == e
            out[sel] = np.interp(s[sel], self.mesh.nodes[e], self.values[e])
        return float(out) if out.ndim == 0 else out

    def slope(self, j, t):
        """Derivative in the cell containing ``t`` (right cell at a node)."""
        i, _ = self.mesh.locate(j, t)
        d = np.diff(self.values[j]) / self.mesh.cells(j)
        return d[i]

    def is_conforming(self, tol=0.0):
        p = self.tree.parent
        return all(
            abs(self.values[j][0] - self.values[p[j]][-1]) <= tol for j in range(1, self.mesh.m)
        )

    def flat(self):
        return np.concatenate(self.values)

    def copy(self):
        return TreeFunction(self.mesh, self.values)

    def _combine(self, other, op):
        if isinstance(other, TreeFunction):
            self.mesh.check(other)
            return TreeFunction(self.mesh, [op(a, b) for a, b in zip(self.values, other.values)])
        return TreeFunction(self.mesh, [op(a, other) for a in self.values])

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, s):
        return TreeFunction(self.mesh, [s * a for a in self.values])

    __rmul__ = __mul__

    def max_abs(self):
        return max(float(np.max(np.abs(v))) for v in self.values)


@dataclass(eq=False)
class StepFunction:
    """Piecewise-constant data, one value per mesh cell."""

    mesh: Mesh
    values: list

    def __post_init__(self):
        vals = [np.asarray(v, dtype=float).copy() for v in self.values]
        if len(vals) != self.mesh.m or any(len(v) != len(x) - 1 for v, x in zip(vals, self.mesh.nodes)):
            raise MeshMismatch("cell arrays do not match the mesh")
        self.values = vals

    def eval(self, j, t):
        t = _check_range(self.mesh, j, t)
        i, _ = self.mesh.locate(j, t)
        out = self.values[j][i]
        return float(out) if np.ndim(out) == 0 else out

    def cell_integrals(self, j):
        return self.values[j] * self.mesh.cells(j)


@dataclass(frozen=True, eq=False)
class DofLayout:
    """Constrained numbering of mesh nodes.

    ``node_id[j][i]`` is the vertex-merged node number of local node ``i`` on
    edge ``j``.  ``dof[n]`` is the free unknown of merged node ``n`` or -1 if
    the node is fixed to ``fixed_value[n]``.
    """

    mesh: Mesh
    mode: str
    node_id: tuple
    dof: np.ndarray
    fixed_value: np.ndarray
    free_nodes: np.ndarray = field(repr=False)

    @property
    def n_nodes(self):
        return len(self.dof)

    @property
    def n_free(self):
        return len(self.free_nodes)

    @cached_property
    def gather(self):
        """Sparse 0/1 matrix mapping merged node values to per-edge (flat) values."""
        import scipy.sparse as sp

        rows = np.arange(self.mesh.node_count)
        cols = np.concatenate(self.node_id)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(rows), self.n_nodes))

    def node_values(self, f):
        """Merged node values of a conforming function."""
        out = np.empty(self.n_nodes)
        for ids, v in zip(self.node_id, f.values):
            out[ids] = v
        return out

    def to_function(self, node_values):
        return TreeFunction(self.mesh, [node_values[ids] for ids in self.node_id])

    def expand(self, x):
        """Function with free DOFs ``x`` and the layout's fixed values elsewhere."""
        vals = self.fixed_value.copy()
        vals[self.free_nodes] = x
        return self.to_function(vals)

    def free_values(self, f):
        return self.node_values(f)[self.free_nodes]

    def basis(self, p):
        """Hat function of free DOF ``p`` (fixed nodes set to zero)."""
        vals = np.zeros(self.n_nodes)
        vals[self.free_nodes[p]] = 1.0
        return self.to_function(vals)

    def satisfies_constraints(self, f, tol=0.0):
        if not f.is_conforming(tol):
            return False
        fixed = self.dof < 0
        return bool(np.all(np.abs(self.node_values(f)[fixed] - self.fixed_value[fixed]) <= tol))


def build_dof_layout(tree, mesh, mode="test", y0=0.0):
    """Layout of the trial space (``y1(0) = y0``) or the test space (``y1(0) = 0``).

    Child edges share their first node with the parent's last node, and nodes
    at or beyond ``q_j(T_j)`` on boundary edges are fixed to zero.
    """
    if mode not in ("trial", "test"):
        raise ValueError(f"mode must be 'trial' or 'test', got {mode!r}")
    if mesh.tree is not tree:
        raise MeshMismatch("mesh was built on a different tree")
    node_id = []
    count = 0
    for j in range(tree.m):
        n = len(mesh.nodes[j])
        ids = np.empty(n, dtype=int)
        k = tree.parent[j]
        if k < 0:
            ids[:] = np.arange(count, count + n)
            count += n
        else:
            ids[0] = node_id[k][-1]
            ids[1:] = np.arange(count, count + n - 1)
            count += n - 1
        node_id.append(ids)
    fixed = np.full(count, np.nan)
    fixed[node_id[0][0]] = y0 if mode == "trial" else 0.0
    for j in range(tree.m):
        if not tree.internal[j]:
            fixed[node_id[j][mesh.target_index[j]:]] = 0.0
    free_nodes = np.flatnonzero(np.isnan(fixed))
    dof = np.full(count, -1, dtype=int)
    dof[free_nodes] = np.arange(len(free_nodes))
    for a in node_id + [dof, fixed, free_nodes]:
        a.setflags(write=False)
    return DofLayout(mesh, mode, tuple(node_id), dof, fixed, free_nodes)


def _cell_sq_integrals(x, v):
    """Exact integral of a linear function squared over each cell."""
    a, b = v[:-1], v[1:]
    return np.diff(x) * (a * a + a * b + b * b) / 3.0


def l2_norm_sq(f, j, i0=0, i1=None):
    """Exact squared L2 norm of ``f_j`` between nodes ``i0`` and ``i1``."""
    x = f.mesh.nodes[j][i0:i1]
    v = f.values[j][i0:i1]
    return float(np.sum(_cell_sq_integrals(x, v)))


def h1_norm(f, trimmed=False):
    """W_2^1 norm over the whole tree, or over the trimmed tree (``[0, q_j(T_j)]``
    on boundary edges) when ``trimmed`` is set."""
    tree, mesh = f.tree, f.mesh
    total = 0.0
    for j in range(tree.m):
        stop = None if (tree.internal[j] or not trimmed) else mesh.target_index[j] + 1
        x = mesh.nodes[j][:stop]
        v = f.values[j][:stop]
        dx = np.diff(x)
        total += np.sum(_cell_sq_integrals(x, v)) + np.sum(np.diff(v) ** 2 / dx)
    return float(np.sqrt(total))
