"""Numerical checks of an optimal state: vertex conditions, the strong-form
equations, optimality, special-case equivalences and convergence studies."""

import math
from dataclasses import dataclass, field

import numpy as np

from .cauchy import ell, solve_forward
from .errors import NotAChain, TooFewLevels, ValidationError
from .galerkin import (
    assemble,
    ell_operator,
    energy,
    extract_control,
    smallest_eigenvalue,
    solve,
    solve_iterative,
)
from .grid import _merge_close, build_dof_layout, build_mesh, h1_norm, mesh_from_nodes
from .tree import build_tree

__all__ = [
    "VerificationReport",
    "ConvergenceStudy",
    "kirchhoff_coefficients",
    "kirchhoff_residual",
    "strong_residual",
    "optimality_probe",
    "orthogonality_defect",
    "chain_equals_interval",
    "convergence_study",
    "observed_orders",
    "verify",
]

# deviations below this (relative to the solution scale) count as exact
EXACT = 1e-12


def kirchhoff_coefficients(tree, spec):
    """``beta_j = alpha_j b_j - sum_children alpha b`` and likewise ``gamma_j`` with ``c``."""
    beta = np.full(tree.m, np.nan)
    gamma = np.full(tree.m, np.nan)
    for j in range(tree.m):
        kids = list(tree.children[j])
        if kids:
            beta[j] = spec.alpha[j] * spec.b[j] - np.dot(spec.alpha[kids], spec.b[kids])
            gamma[j] = spec.alpha[j] * spec.c[j] - np.dot(spec.alpha[kids], spec.c[kids])
    return beta, gamma


def _d_left(x, v):
    """Second-order one-sided derivative at ``x[0]`` from the first three nodes."""
    if len(x) < 3:
        return (v[1] - v[0]) / (x[1] - x[0])
    h1, h2 = x[1] - x[0], x[2] - x[1]
    return (
        -(2 * h1 + h2) / (h1 * (h1 + h2)) * v[0]
        + (h1 + h2) / (h1 * h2) * v[1]
        - h1 / (h2 * (h1 + h2)) * v[2]
    )


def _d_right(x, v):
    # mirror of _d_left
    return -_d_left(-x[::-1], v[::-1])


def kirchhoff_residual(tree, spec, y):
    """Residual of the vertex condition at every internal vertex.

    Returns ``{edge_index: |alpha_j y_j'(T_j-) + beta_j y_j(T_j)
    + gamma_j y_j(q_j(T_j)) - sum_children alpha_nu y_nu'(0+)|}``.
    """
    mesh = y.mesh
    beta, gamma = kirchhoff_coefficients(tree, spec)
    out = {}
    for j in range(tree.m):
        if not tree.internal[j]:
            continue
        x, v = mesh.nodes[j], y.values[j]
        lhs = (
            spec.alpha[j] * _d_right(x, v)
            + beta[j] * v[-1]
            + gamma[j] * v[mesh.target_index[j]]
        )
        flux = sum(spec.alpha[nu] * _d_left(mesh.nodes[nu], y.values[nu]) for nu in tree.children[j])
        out[j] = abs(lhs - flux)
    return out


def singular_points(tree, j):
    """Points of ``(0, l_j)`` where ``(ell_j y)'`` may jump.

    ``ell~_j`` switches branch at ``q_j(T_j)`` on internal edges, and it reads
    ``ell_e y`` of a boundary edge ``e`` across that edge's target point, where
    ``ell_e y`` jumps.
    """
    q = tree.q
    pts = []
    if tree.internal[j]:
        pts.append(tree.target[j])
        for nu in tree.children[j]:
            if not tree.internal[nu]:
                pts.append(tree.length[j] + (tree.target[nu] - tree.crossing[nu]) / q)
    else:
        pts.append((tree.target[j] - tree.crossing[j]) / q)
    return np.array(pts)


def strong_residual(tree, spec, y):
    """Discrete L2 norm over ``(0, l_j)`` of
    ``-alpha_j (ell_j y)' + alpha_j b_j ell_j y + ell~_j y`` on every edge.

    ``ell_j y`` is sampled at cell midpoints; its derivative at a node is the
    divided difference of the two neighbouring samples.  For a piecewise-linear
    ``y`` the second derivative lives in the slope jumps at the nodes, so
    differencing across cells is what makes the estimate consistent.  Nodes
    within one mesh spacing of a :func:`singular_points` entry are skipped.
    """
    mesh = y.mesh
    q = tree.q
    samples = [ell(spec, y, j, mesh.midpoints(j)) for j in range(tree.m)]

    def ell_hat(e, t):
        return np.interp(t, mesh.midpoints(e), samples[e])

    out = np.zeros(tree.m)
    for j in range(tree.m):
        x = mesh.nodes[j]
        stop = len(x) if tree.internal[j] else mesh.target_index[j] + 1
        if stop < 3:
            continue
        xs = x[:stop]
        hs = np.diff(xs)
        u = samples[j][: stop - 1]
        t = xs[1:-1]
        hl, hr = hs[:-1], hs[1:]
        width = 0.5 * (hl + hr)
        d = (u[1:] - u[:-1]) / width
        lv = u[:-1] + (u[1:] - u[:-1]) * hl / (hl + hr)
        tilde = np.zeros_like(t)
        head = t < tree.target[j]
        tilde[head] = q * spec.alpha[j] * spec.c[j] * ell_hat(j, q * t[head] + tree.crossing[j])
        tail = t > tree.target[j]
        for nu in tree.children[j]:
            tilde[tail] += (
                q * spec.alpha[nu] * spec.c[nu]
                * ell_hat(nu, q * t[tail] + tree.crossing[nu] - q * tree.length[j])
            )
        r = -spec.alpha[j] * d + spec.alpha[j] * spec.b[j] * lv + tilde
        keep = np.ones(len(t), dtype=bool)
        for p in singular_points(tree, j):
            keep &= np.abs(t - p) >= mesh.h
        out[j] = math.sqrt(float(np.sum(width[keep] * r[keep] ** 2)))
    return out


def _ell_at_quadrature(tree, spec, mesh, f):
    return np.concatenate([ell(spec, f, j, mesh.quadrature[j][0]) for j in range(tree.m)])


def _weights(tree, spec, mesh):
    return np.concatenate([spec.alpha[j] * mesh.quadrature[j][1] for j in range(tree.m)])


def random_test_function(layout, rng):
    """Standard normal free DOFs, normalized to unit W_2^1 norm."""
    w = layout.expand(rng.standard_normal(layout.n_free))
    return w * (1.0 / h1_norm(w))


def optimality_probe(tree, spec, mesh, y, n=200, seed=0):
    """Worst ``J(y + s w) - J(y)`` over ``n`` random unit test directions ``w``
    and ``s`` in ``{+-1e-2, +-1e-1, +-1}``.  Returns ``inf`` when ``n == 0``."""
    if n <= 0:
        return math.inf
    layout = build_dof_layout(tree, mesh, "test")
    if layout.n_free == 0:
        return math.inf
    rng = np.random.default_rng(seed)
    wq = _weights(tree, spec, mesh)
    ly = _ell_at_quadrature(tree, spec, mesh, y)
    J0 = float(np.dot(wq, ly * ly))
    steps = np.array([1e-2, -1e-2, 1e-1, -1e-1, 1.0, -1.0])
    worst = math.inf
    for _ in range(n):
        w = random_test_function(layout, rng)
        lw = _ell_at_quadrature(tree, spec, mesh, w)
        for s in steps:
            v = ly + s * lw  # ell is linear, so this is ell(y + s w)
            worst = min(worst, float(np.dot(wq, v * v)) - J0)
    return worst


def orthogonality_defect(system, y):
    """``max_p |B(y, phi_p)|`` over free hat functions, divided by the
    Cauchy-Schwarz bound ``sqrt(J(y)) * max_p sqrt(J(phi_p))``.

    ``ell y`` is evaluated pointwise; only the test side uses the assembled
    operator.
    """
    tree, spec, mesh, layout = system.tree, system.spec, system.mesh, system.layout
    if layout.n_free == 0:
        return 0.0
    L, wq = ell_operator(tree, spec, mesh)
    Lf = (L @ layout.gather).tocsc()[:, layout.free_nodes]
    ly = _ell_at_quadrature(tree, spec, mesh, y)
    r = Lf.T @ (wq * ly)
    Jy = float(np.dot(wq, ly * ly))
    scale = math.sqrt(max(Jy, 0.0)) * math.sqrt(float(np.max(system.A.diagonal())))
    if scale == 0.0:
        return float(np.max(np.abs(r)))
    return float(np.max(np.abs(r))) / scale


def chain_equals_interval(tree, spec, h):
    """Solve a chain tree and the single interval it unrolls to; return the
    largest node-wise difference.

    Both problems are discretized on the same global-time nodes.
    """
    if not tree.is_chain():
        raise NotAChain("tree has a vertex with more than one outgoing edge")
    for name in ("b", "c", "alpha"):
        a = getattr(spec, name)
        if np.any(a != a[0]):
            raise ValidationError(f"chain comparison needs a common {name} on all edges")
    mesh = build_mesh(tree, h)
    total = float(tree.entry_time[-1] + tree.length[-1])
    line = build_tree([0], [total], tree.q)
    glob = np.concatenate([tree.entry_time[j] + mesh.nodes[j] for j in range(tree.m)])
    glob = _merge_close(glob, 1e-12 * max(1.0, total))
    glob[0], glob[-1] = 0.0, total
    line_mesh = mesh_from_nodes(line, [glob])
    line_spec = type(spec)(spec.b[:1], spec.c[:1], spec.alpha[:1], spec.y0)
    _, y_chain = _optimize(tree, spec, mesh)
    _, y_line = _optimize(line, line_spec, line_mesh)
    dev = 0.0
    for j in range(tree.m):
        ref = y_line.eval(0, np.clip(tree.entry_time[j] + mesh.nodes[j], 0.0, total))
        dev = max(dev, float(np.max(np.abs(ref - y_chain.values[j]))))
    return dev


def _optimize(tree, spec, mesh):
    system = assemble(tree, spec, mesh)
    return system, solve(system)


def _order(e0, e1, scale):
    if e0 <= EXACT * scale and e1 <= EXACT * scale:
        return "exact"
    if e1 <= 0.0 or e0 <= 0.0:
        return math.inf if e1 <= 0.0 else -math.inf
    return math.log2(e0 / e1)


def observed_orders(errors, scale=1.0):
    """Successive orders ``log2(e_k / e_{k+1})`` for levels refined by 2;
    ``"exact"`` when both errors are at roundoff."""
    return [_order(a, b, scale) for a, b in zip(errors[:-1], errors[1:])]


@dataclass
class ConvergenceStudy:
    h: list
    roundtrip: list
    kirchhoff: list
    energy: list
    roundtrip_orders: list = field(default_factory=list)
    kirchhoff_orders: list = field(default_factory=list)
    energy_orders: list = field(default_factory=list)

    def rows(self):
        """Table rows ``(h, roundtrip, order, kirchhoff, order, J, energy order)``."""
        out = []
        for i, h in enumerate(self.h):
            pick = lambda seq: seq[i - 1] if i > 0 and i - 1 < len(seq) else None  # noqa: E731
            out.append(
                dict(
                    h=h,
                    roundtrip=self.roundtrip[i],
                    roundtrip_order=pick(self.roundtrip_orders),
                    kirchhoff=self.kirchhoff[i],
                    kirchhoff_order=pick(self.kirchhoff_orders),
                    J=self.energy[i],
                    energy_order=self.energy_orders[i - 2] if i >= 2 else None,
                )
            )
        return out


def roundtrip_deviation(tree, spec, mesh, y):
    u = extract_control(tree, spec, mesh, y)
    return (solve_forward(tree, spec, u, mesh) - y).max_abs()


def convergence_study(tree, spec, h_levels):
    """Observed orders of the control round trip, the vertex residual and the
    energy decrements over successively halved mesh sizes."""
    h_levels = [float(h) for h in h_levels]
    if len(h_levels) < 3:
        raise TooFewLevels(f"need at least 3 mesh levels, got {len(h_levels)}")
    for a, b in zip(h_levels[:-1], h_levels[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ValidationError("each mesh level must halve the previous spacing")
    rt, kr, en = [], [], []
    scale = 1.0
    for h in h_levels:
        mesh = build_mesh(tree, h)
        system, y = _optimize(tree, spec, mesh)
        scale = max(abs(spec.y0), y.max_abs(), 1e-300)
        rt.append(roundtrip_deviation(tree, spec, mesh, y))
        kres = kirchhoff_residual(tree, spec, y)
        kr.append(max(kres.values()) if kres else 0.0)
        en.append(energy(tree, spec, mesh, y))
    dec = [abs(a - b) for a, b in zip(en[:-1], en[1:])]
    study = ConvergenceStudy(h_levels, rt, kr, en)
    study.roundtrip_orders = observed_orders(rt, scale)
    study.kirchhoff_orders = observed_orders(kr, scale)
    study.energy_orders = observed_orders(dec, max(en[-1], 1e-300))
    return study


@dataclass
class VerificationReport:
    J: float
    kirchhoff: dict
    strong: dict
    optimality_margin: float
    orthogonality: float
    min_eigenvalue: float
    uniqueness_deviation: float
    roundtrip_deviation: float
    constraint_violation: float
    kirchhoff_refined: dict
    seed: int
    n_probes: int
    tol: float
    gates: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.gates.values())

    @property
    def probe_run(self):
        return self.n_probes > 0 and math.isfinite(self.optimality_margin)


def constraint_violation(tree, spec, mesh, y):
    layout = build_dof_layout(tree, mesh, "trial", spec.y0)
    fixed = layout.dof < 0
    worst = 0.0
    for j in range(1, tree.m):
        worst = max(worst, abs(y.values[j][0] - y.values[tree.parent[j]][-1]))
    vals = layout.node_values(y)
    if np.any(fixed):
        worst = max(worst, float(np.max(np.abs(vals[fixed] - layout.fixed_value[fixed]))))
    return worst


def verify(tree, spec, h, tol=1e-10, seed=0, n_probes=200, system=None, y=None):
    """Solve (unless given) and run every check; returns ``(report, system, y)``.

    Gates: the matrix is positive definite, the probe finds no descent
    direction, Galerkin orthogonality and the constraints hold to ``tol``,
    direct and iterative solves agree, and the vertex residual does not grow
    when the mesh is halved.
    """
    mesh = build_mesh(tree, h) if system is None else system.mesh
    if system is None:
        system, y = _optimize(tree, spec, mesh)
    elif y is None:
        y = solve(system)
    J = energy(tree, spec, mesh, y)
    scale = max(abs(spec.y0), y.max_abs(), 1e-300)

    kres = {tree.labels[j]: r for j, r in kirchhoff_residual(tree, spec, y).items()}
    sres = dict(zip(tree.labels, strong_residual(tree, spec, y)))
    margin = optimality_probe(tree, spec, mesh, y, n_probes, seed)
    ortho = orthogonality_defect(system, y)
    lam = smallest_eigenvalue(system)
    y_cg = solve_iterative(system)
    uniq = (y_cg - y).max_abs()
    rt = roundtrip_deviation(tree, spec, mesh, y)
    cviol = constraint_violation(tree, spec, mesh, y)

    fine = build_mesh(tree, h / 2)
    _, y_fine = _optimize(tree, spec, fine)
    kfine = {tree.labels[j]: r for j, r in kirchhoff_residual(tree, spec, y_fine).items()}

    report = VerificationReport(
        J=J,
        kirchhoff=kres,
        strong=sres,
        optimality_margin=margin,
        orthogonality=ortho,
        min_eigenvalue=lam,
        uniqueness_deviation=uniq,
        roundtrip_deviation=rt,
        constraint_violation=cviol,
        kirchhoff_refined=kfine,
        seed=seed,
        n_probes=n_probes,
        tol=tol,
    )
    floor = tol * scale
    report.gates = {
        "positive_definite": lam > 0,
        "optimality": (not math.isfinite(margin)) or margin >= -tol * max(J, 1e-300),
        "orthogonality": ortho <= tol,
        "constraints": cviol <= 1e-14 * scale,
        "uniqueness": uniq <= 1e-9 * scale,
        "kirchhoff_refinement": all(kfine[k] <= max(kres[k], floor) for k in kres),
    }
    return report, system, y
