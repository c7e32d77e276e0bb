"""Forward problem: ``y_j' + b_j y_j + c_j y_j(q_j(t)) = u_j`` on the tree.

Edges are integrated in canonical order (parents first).  Each step is the
trapezoidal rule applied to the integrated form

    y(t_{n+1}) = y(t_n) + int u - b int y - c int y(q_j(s)) ds,

with delayed values taken from the piecewise-linear interpolant of the
already computed history.  Near the start of the root edge the delayed point
can fall inside the current step; it is then a linear combination of the old
and the new value and the step is still solved in closed form.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MeshMismatch, StepRejected, ValidationError
from .grid import StepFunction, TreeFunction

__all__ = [
    "ProblemSpec",
    "ell",
    "solve_forward",
    "residual_forward",
    "volterra_kernel",
]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Per-edge coefficients in canonical edge order, plus the initial state."""

    b: np.ndarray
    c: np.ndarray
    alpha: np.ndarray
    y0: float

    def __post_init__(self):
        for name in ("b", "c", "alpha"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 1 or not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} must be a finite per-edge vector")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (len(self.b) == len(self.c) == len(self.alpha)):
            raise ValidationError("b, c and alpha must have one entry per edge")
        if np.any(self.alpha <= 0):
            raise ValidationError("weights alpha must be positive")
        if not np.isfinite(self.y0):
            raise ValidationError("y0 must be finite")
        object.__setattr__(self, "y0", float(self.y0))

    @classmethod
    def uniform(cls, m, b=0.0, c=0.0, alpha=1.0, y0=1.0):
        return cls(np.full(m, b, dtype=float), np.full(m, c, dtype=float), np.full(m, alpha, dtype=float), y0)

    def with_y0(self, y0):
        return ProblemSpec(self.b, self.c, self.alpha, y0)


def ell(spec, f, j, t):
    """Pointwise ``ell_j f(t)``; ``t`` should avoid nodes, where the slope is one-sided."""
    return f.slope(j, t) + spec.b[j] * f.eval(j, t) + spec.c[j] * f.eval_delayed(j, t)


def _cell_integrals(controls, mesh, j):
    if controls is None:
        return np.zeros(len(mesh.nodes[j]) - 1)
    if controls.mesh is not mesh:
        raise MeshMismatch("controls are defined on a different mesh")
    if isinstance(controls, StepFunction):
        return controls.cell_integrals(j)
    u = controls.values[j]
    return 0.5 * mesh.cells(j) * (u[:-1] + u[1:])


def solve_forward(tree, spec, controls, mesh):
    """Integrate the Cauchy problem for the given controls.

    ``controls`` is a :class:`TreeFunction` (piecewise linear), a
    :class:`StepFunction` (piecewise constant per cell) or ``None`` (zero).
    Returns the state as a conforming :class:`TreeFunction`.
    """
    if mesh.tree is not tree:
        raise MeshMismatch("mesh was built on a different tree")
    if len(spec.b) != tree.m:
        raise MeshMismatch("problem coefficients do not match the tree")
    out = []
    for j in range(tree.m):
        x = mesh.nodes[j]
        N = len(x)
        b, c = spec.b[j], spec.c[j]
        U = _cell_integrals(controls, mesh, j)
        y = np.empty(N)
        yd = np.empty(N)
        k = tree.parent[j]
        y[0] = spec.y0 if k < 0 else out[k][-1]

        edge, s = tree.delay(j, x)
        own = edge == j
        if np.any(~own):
            yd[~own] = np.interp(s[~own], mesh.nodes[k], out[k])
        cell = np.clip(np.searchsorted(x, s, side="right") - 1, 0, N - 2)
        theta = (s - x[cell]) / (x[cell + 1] - x[cell])
        if own[0]:
            yd[0] = y[0]  # root edge: q_1(0) = 0

        for n in range(N - 1):
            h = x[n + 1] - x[n]
            a = 0.5 * h * b
            g = 0.5 * h * c
            if own[n + 1] and s[n + 1] >= x[n]:
                th = (s[n + 1] - x[n]) / h
                if abs(a + g * th) >= 1.0:
                    raise StepRejected(
                        f"step {n} on edge {tree.labels[j]!r} does not contract "
                        f"(h*b/2 + h*c*theta/2 = {a + g * th:.3g})",
                        edge=tree.labels[j],
                        step=n,
                    )
                rhs = y[n] * (1.0 - a) - g * (yd[n] + (1.0 - th) * y[n]) + U[n]
                y[n + 1] = rhs / (1.0 + a + g * th)
                yd[n + 1] = (1.0 - th) * y[n] + th * y[n + 1]
                continue
            if own[n + 1]:
                i, th = cell[n + 1], theta[n + 1]
                yd[n + 1] = (1.0 - th) * y[i] + th * y[i + 1]
            if abs(a) >= 1.0:
                raise StepRejected(
                    f"step {n} on edge {tree.labels[j]!r} does not contract (h*b/2 = {a:.3g})",
                    edge=tree.labels[j],
                    step=n,
                )
            rhs = y[n] * (1.0 - a) - g * (yd[n] + yd[n + 1]) + U[n]
            y[n + 1] = rhs / (1.0 + a)
        out.append(y)
    return TreeFunction(mesh, out)


def residual_forward(tree, spec, y, u):
    """Per-edge L2 norm of ``ell_j y - u_j`` by midpoint sampling."""
    mesh = y.mesh
    res = np.empty(tree.m)
    for j in range(tree.m):
        tm = mesh.midpoints(j)
        r = ell(spec, y, j, tm)
        if u is not None:
            mesh.check(u)
            r = r - u.eval(j, tm)
        res[j] = np.sqrt(np.sum(mesh.cells(j) * r * r))
    return res


def volterra_kernel(tree, spec, t, s):
    """Kernel of the root-edge Volterra equation ``y = f + int_0^t K(t, s) y(s) ds``."""
    b, c = spec.b[0], spec.c[0]
    return np.where(np.asarray(s) <= np.asarray(t) / tree.q, -(b + tree.q * c), -b)
