"""Galerkin solution of the minimum-energy damping problem.

The optimal state minimizes ``J(y) = sum_j alpha_j int_0^{T_j} (ell_j y)^2`` over
continuous piecewise-linear functions with ``y_1(0) = y0`` and ``y_j = 0`` on
``[q_j(T_j), T_j]`` for boundary edges.  Writing ``y = Phi + x`` with the
explicit lift ``Phi`` and ``x`` in the homogeneous space, stationarity gives the
SPD system ``A x = g`` with ``A[p, r] = B(phi_p, phi_r)`` and
``g[p] = -B(Phi, phi_p)``.

Two independent routes evaluate the bilinear form: :func:`bilinear` and
:func:`energy` work pointwise on function values, :func:`assemble` builds a
sparse operator from quadrature points to node values.  Both use the
breakpoint-subdivided Gauss rule of :attr:`Mesh.quadrature`, which is exact.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .cauchy import ell
from .errors import MeshMismatch, NotPositiveDefinite
from .grid import StepFunction, TreeFunction, build_dof_layout

__all__ = [
    "GalerkinSystem",
    "bilinear",
    "energy",
    "energy_parts",
    "lift_phi",
    "ell_operator",
    "assemble",
    "solve",
    "solve_iterative",
    "smallest_eigenvalue",
    "extract_control",
    "optimize",
]

# beyond this many unknowns the solve switches from dense to banded Cholesky
DENSE_LIMIT = 3000


def _points(mesh, j, tails=True):
    t, w = mesh.quadrature[j]
    if not tails and not mesh.tree.internal[j]:
        keep = t < mesh.tree.target[j]
        t, w = t[keep], w[keep]
    return t, w


def bilinear(tree, spec, mesh, y, w):
    """``B(y, w) = sum_j alpha_j int ell_j y * ell_j w``, exact for mesh functions."""
    mesh.check(y)
    mesh.check(w)
    total = 0.0
    for j in range(tree.m):
        t, qw = mesh.quadrature[j]
        total += spec.alpha[j] * np.dot(qw, ell(spec, y, j, t) * ell(spec, w, j, t))
    return float(total)


def energy_parts(tree, spec, mesh, y):
    """Per-edge ``alpha_j int (ell_j y)^2`` split at ``q_j(T_j)`` into (head, tail).

    The tail is nonzero on boundary edges whenever ``c_j != 0``: there ``y_j = 0``
    but the delayed term still reads the state.  Internal edges report their
    whole integral as head.
    """
    mesh.check(y)
    parts = np.zeros((tree.m, 2))
    for j in range(tree.m):
        t, qw = mesh.quadrature[j]
        v = spec.alpha[j] * qw * ell(spec, y, j, t) ** 2
        if tree.internal[j]:
            parts[j, 0] = v.sum()
        else:
            tail = t > tree.target[j]
            parts[j] = v[~tail].sum(), v[tail].sum()
    return parts


def energy(tree, spec, mesh, y):
    return float(energy_parts(tree, spec, mesh, y).sum())


def lift_phi(tree, mesh, y0):
    """``Phi_1(t) = y0 (1 - q t / T_1)`` on ``[0, T_1/q]``, zero elsewhere."""
    vals = [np.zeros_like(x) for x in mesh.nodes]
    x = mesh.nodes[0]
    T1 = tree.length[0]
    vals[0] = np.where(x < tree.target[0], y0 * (1.0 - tree.q * x / T1), 0.0)
    return TreeFunction(mesh, vals)


def ell_operator(tree, spec, mesh, tails=True):
    """Sparse map from flat per-edge node values to ``ell_j`` at quadrature points.

    Returns ``(L, weights)`` with ``weights`` already multiplied by ``alpha_j``,
    so that ``J(y) = sum(weights * (L @ y.flat())**2)``.
    """
    rows, cols, vals, wts = [], [], [], []
    off = mesh.offsets
    start = 0
    for j in range(tree.m):
        t, w = _points(mesh, j, tails)
        n = len(t)
        r = np.arange(start, start + n)
        i, th = mesh.locate(j, t)
        hj = mesh.cells(j)[i]
        b, c = spec.b[j], spec.c[j]
        rows += [r, r]
        cols += [off[j] + i, off[j] + i + 1]
        vals += [-1.0 / hj + b * (1.0 - th), 1.0 / hj + b * th]
        if c != 0.0:
            e, s = tree.delay(j, t)
            for ee in np.unique(e):
                sel = e == ee
                ii, tt = mesh.locate(ee, s[sel])
                rows += [r[sel], r[sel]]
                cols += [off[ee] + ii, off[ee] + ii + 1]
                vals += [c * (1.0 - tt), c * tt]
        wts.append(spec.alpha[j] * w)
        start += n
    L = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(start, mesh.node_count),
    )
    return L, np.concatenate(wts)


@dataclass(eq=False)
class GalerkinSystem:
    tree: object
    spec: object
    mesh: object
    layout: object
    A: sp.csr_matrix
    g: np.ndarray
    J_phi: float
    phi: TreeFunction
    # quadratic form of J over all merged nodes, fixed ones included
    Q: sp.csr_matrix = field(repr=False)

    @property
    def n(self):
        return len(self.g)


def assemble(tree, spec, mesh, tails=True):
    """Assemble ``A``, ``g`` and ``J(Phi)`` on the test-space layout.

    ``tails=False`` drops the integrals over ``[q_j(T_j), T_j]`` of boundary
    edges.  That is *not* the energy functional; it only exists to show the
    tails matter.
    """
    if mesh.tree is not tree:
        raise MeshMismatch("mesh was built on a different tree")
    layout = build_dof_layout(tree, mesh, "test")
    L, w = ell_operator(tree, spec, mesh, tails)
    Lm = (L @ layout.gather).tocsr()
    Q = (Lm.T @ sp.diags(w) @ Lm).tocsr()
    Q = 0.5 * (Q + Q.T)
    phi = lift_phi(tree, mesh, spec.y0)
    pv = layout.node_values(phi)
    free = layout.free_nodes
    Qf = Q[free]
    A = Qf[:, free].tocsr()
    g = -(Qf @ pv)
    return GalerkinSystem(tree, spec, mesh, layout, A, g, float(pv @ (Q @ pv)), phi, Q)


def _banded_cholesky_solve(A, g):
    perm = csgraph.reverse_cuthill_mckee(A.tocsr(), symmetric_mode=True)
    Ap = A[perm][:, perm].tocoo()
    upper = Ap.row <= Ap.col
    r, c, v = Ap.row[upper], Ap.col[upper], Ap.data[upper]
    u = int(np.max(c - r)) if len(r) else 0
    ab = np.zeros((u + 1, A.shape[0]))
    ab[u + r - c, c] = v
    try:
        cb = sla.cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"banded Cholesky failed: {exc}") from None
    x = np.empty_like(g)
    x[perm] = sla.cho_solve_banded((cb, False), g[perm])
    return x


def solve_free(system, method="auto"):
    """Solve ``A x = g`` by Cholesky; returns the free-DOF vector."""
    n = system.n
    if n == 0:
        return np.zeros(0)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "banded"
    if method == "banded":
        return _banded_cholesky_solve(system.A, system.g)
    try:
        cf = sla.cho_factor(system.A.toarray(), lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from None
    return sla.cho_solve(cf, system.g)


def solve(system, method="auto"):
    """Optimal state ``y = Phi + x`` with ``A x = g``."""
    x = solve_free(system, method)
    return system.phi + system.layout.expand(x)


def solve_iterative(system, rtol=1e-12):
    """Same solution by conjugate gradients; an independent path for cross-checks."""
    if system.n == 0:
        return system.phi.copy()
    x, info = spla.cg(system.A, system.g, rtol=rtol, atol=0.0, maxiter=20 * system.n)
    if info != 0:
        raise RuntimeError(f"conjugate gradients did not converge (info={info})")
    return system.phi + system.layout.expand(x)


def smallest_eigenvalue(system):
    """Smallest eigenvalue of ``A`` (dense below 2000 unknowns, Lanczos/Ritz above)."""
    if system.n == 0:
        return np.inf
    if system.n <= 2000:
        return float(sla.eigvalsh(system.A.toarray(), subset_by_index=[0, 0])[0])
    val = spla.eigsh(system.A, k=1, which="SA", return_eigenvectors=False, tol=1e-10)
    return float(val[0])


def extract_control(tree, spec, mesh, y):
    """Optimal control ``u_j = ell_j y`` as one value per cell (taken at midpoints)."""
    mesh.check(y)
    return StepFunction(mesh, [ell(spec, y, j, mesh.midpoints(j)) for j in range(tree.m)])


def optimize(tree, spec, mesh, method="auto"):
    """Assemble and solve; returns ``(system, y)``."""
    system = assemble(tree, spec, mesh)
    return system, solve(system, method)
