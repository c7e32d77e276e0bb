import math

import numpy as np
import pytest
from conftest import INSTANCES, instance, random_spec, star, two_level

from treedamp import (
    NotAChain,
    ProblemSpec,
    TooFewLevels,
    ValidationError,
    build_dof_layout,
    build_mesh,
    build_tree,
    chain_equals_interval,
    convergence_study,
    h1_norm,
    kirchhoff_residual,
    optimality_probe,
    optimize,
    solve_iterative,
    strong_residual,
    verify,
)
from treedamp.verify import kirchhoff_coefficients, observed_orders, orthogonality_defect


# ---------------------------------------------------------------- star-only reference


def _star_ell(tree, spec, y, j, t):
    """``ell_j y`` on a star written out by hand (no library delay helpers)."""
    q, T1 = tree.q, tree.length[0]
    x, v = y.mesh.nodes[j], y.values[j]
    cell = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
    slope = (v[cell + 1] - v[cell]) / (x[cell + 1] - x[cell])
    val = np.interp(t, x, v)
    if j == 0:
        delayed = np.interp(t / q, x, v)
    else:
        s = (t - (q - 1) * T1) / q
        delayed = np.where(s >= 0, np.interp(np.maximum(s, 0), x, v), np.interp(s + T1, y.mesh.nodes[0], y.values[0]))
    return slope + spec.b[j] * val + spec.c[j] * delayed


def _star_kirchhoff(tree, spec, y):
    a, b, c, q = spec.alpha, spec.b, spec.c, tree.q
    x0, v0 = y.mesh.nodes[0], y.values[0]
    d_end = np.polyval(np.polyder(np.polyfit(x0[-3:], v0[-3:], 2)), x0[-1])
    total = a[0] * d_end
    total += (a[0] * b[0] - a[1:] @ b[1:]) * v0[-1]
    total += (a[0] * c[0] - a[1:] @ c[1:]) * np.interp(x0[-1] / q, x0, v0)
    for j in range(1, tree.m):
        x, v = y.mesh.nodes[j], y.values[j]
        total -= a[j] * np.polyval(np.polyder(np.polyfit(x[:3], v[:3], 2)), 0.0)
    return abs(total)


def _star_strong(tree, spec, y):
    """The star boundary value problem: root equation with its two branches,
    child equations up to their active length."""
    mesh = y.mesh
    q, T1, a, b, c = tree.q, tree.length[0], spec.alpha, spec.b, spec.c
    mids = [mesh.midpoints(j) for j in range(tree.m)]
    ells = [_star_ell(tree, spec, y, j, mids[j]) for j in range(tree.m)]

    def L(j, t):
        return np.interp(t, mids[j], ells[j])

    out = []
    for j in range(tree.m):
        x = mesh.nodes[j]
        end = T1 if j == 0 else (tree.length[j] - (q - 1) * T1) / q
        xs = x[x <= end + 1e-12]
        t = xs[1:-1]
        u = ells[j][: len(xs) - 1]
        hl, hr = np.diff(xs)[:-1], np.diff(xs)[1:]
        width = 0.5 * (hl + hr)
        d = (u[1:] - u[:-1]) / width
        lv = u[:-1] + (u[1:] - u[:-1]) * hl / (hl + hr)
        if j == 0:
            extra = np.where(
                t < T1 / q,
                q * a[0] * c[0] * L(0, q * t),
                sum(q * a[k] * c[k] * L(k, q * t - T1) for k in range(1, tree.m)),
            )
            skip = [T1 / q] + [(T1 + (tree.length[k] - (q - 1) * T1) / q) / q for k in range(1, tree.m)]
        else:
            extra = q * a[j] * c[j] * L(j, q * t + (q - 1) * T1)
            skip = [(end - (q - 1) * T1) / q]
        r = -a[j] * d + a[j] * b[j] * lv + extra
        keep = np.all([np.abs(t - p) >= mesh.h for p in skip], axis=0)
        out.append(math.sqrt(np.sum(width[keep] * r[keep] ** 2)))
    return np.array(out)


@pytest.mark.parametrize("seed", range(6))
def test_star_reference_matches_general_code(seed):
    rng = np.random.default_rng(seed)
    q = rng.choice([1.5, 2.0, 3.0])
    T1 = rng.uniform(0.5, 1.5)
    kids = [(q - 1) * T1 + rng.uniform(0.5, 2.0) for _ in range(rng.integers(2, 4))]
    tree = star(q, T1, kids)
    spec = random_spec(tree, seed)
    mesh = build_mesh(tree, 0.05)
    layout = build_dof_layout(tree, mesh, "trial", spec.y0)
    y = layout.expand(rng.standard_normal(layout.n_free))
    kr = kirchhoff_residual(tree, spec, y)[0]
    ref = _star_kirchhoff(tree, spec, y)
    assert abs(kr - ref) <= 1e-9 * max(1.0, ref)
    np.testing.assert_allclose(strong_residual(tree, spec, y), _star_strong(tree, spec, y), rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------- vertex conditions


def test_kirchhoff_star_ramps_exact(star_tree, star_spec):
    _, y = optimize(star_tree, star_spec, build_mesh(star_tree, 0.25))
    assert kirchhoff_residual(star_tree, star_spec, y)[0] <= 1e-13


def test_kirchhoff_coefficients_example():
    tree = star()
    spec = ProblemSpec([1.0, 2.0, 2.0], [0.0, 0.0, 0.0], [1.0, 0.5, 0.5], 1.0)
    beta, gamma = kirchhoff_coefficients(tree, spec)
    assert beta[0] == -1.0 and gamma[0] == 0.0
    assert np.isnan(beta[1])


def test_kirchhoff_residual_converges(generic):
    tree, spec = generic
    study = convergence_study(tree, spec, [1 / 16, 1 / 32, 1 / 64])
    assert all(o >= 1.0 for o in study.kirchhoff_orders)


# ---------------------------------------------------------------- strong form


def test_strong_residual_zero_for_ramp():
    tree = build_tree([0], [1], 2)
    spec = ProblemSpec.uniform(1)
    mesh = build_mesh(tree, 1 / 16)
    system, y = optimize(tree, spec, mesh)
    assert strong_residual(tree, spec, y)[0] <= 1e-12
    assert strong_residual(tree, spec, system.phi)[0] <= 1e-12


@pytest.mark.parametrize("name", sorted(INSTANCES))
def test_strong_residual_decreases(name):
    tree, spec = instance(name)
    totals = []
    for h in (1 / 16, 1 / 32, 1 / 64, 1 / 128):
        _, y = optimize(tree, spec, build_mesh(tree, h))
        totals.append(strong_residual(tree, spec, y).sum())
    assert all(b < a for a, b in zip(totals[:-1], totals[1:]))
    # least-squares order over the four levels
    order = np.polyfit(np.log2([1 / 16, 1 / 32, 1 / 64, 1 / 128]), np.log2(totals), 1)[0]
    assert order >= 0.5


# ---------------------------------------------------------------- optimality


def test_probe_passes_on_optimum_and_catches_perturbation(generic):
    tree, spec = generic
    mesh = build_mesh(tree, 1 / 16)
    system, y = optimize(tree, spec, mesh)
    assert optimality_probe(tree, spec, mesh, y, n=50, seed=3) > 0
    x = system.layout.free_values(y - system.phi)
    x[0] += 0.1 * y.max_abs()
    bad = system.phi + system.layout.expand(x)
    assert optimality_probe(tree, spec, mesh, bad, n=50, seed=3) < 0


def test_probe_not_run():
    tree, spec = instance("star-q2")
    mesh = build_mesh(tree, 1 / 16)
    _, y = optimize(tree, spec, mesh)
    assert optimality_probe(tree, spec, mesh, y, n=0) == math.inf
    report, _, _ = verify(tree, spec, 1 / 16, n_probes=0)
    assert not report.probe_run and report.gates["optimality"]


def test_probe_reproducible():
    tree, spec = instance("tree-q2")
    mesh = build_mesh(tree, 1 / 16)
    _, y = optimize(tree, spec, mesh)
    assert optimality_probe(tree, spec, mesh, y, 30, seed=9) == optimality_probe(tree, spec, mesh, y, 30, seed=9)


def test_orthogonality(generic):
    tree, spec = generic
    system, y = optimize(tree, spec, build_mesh(tree, 1 / 32))
    assert orthogonality_defect(system, y) <= 1e-10


# ---------------------------------------------------------------- special cases


def test_chain_two_edges():
    # T = (1, 1) at q = 2 sits exactly on the feasibility boundary, which the
    # strict check rejects; the second edge is lengthened slightly
    with pytest.raises(ValidationError):
        build_tree([0, 1], [1, 1], 2)
    tree = build_tree([0, 1], [1, 1.5], 2)
    spec = ProblemSpec.uniform(2, b=0.3, c=0.3, alpha=1.0)
    assert chain_equals_interval(tree, spec, 1 / 16) <= 1e-10


def test_chain_without_dynamics_is_ramp():
    tree = build_tree([0, 1], [1, 1.5], 2)
    spec = ProblemSpec.uniform(2)
    mesh = build_mesh(tree, 1 / 8)
    _, y = optimize(tree, spec, mesh)
    # the unrolled interval has length 2.5: y = 1 - 2t/2.5 up to 1.25, zero after
    g = [tree.entry_time[j] + mesh.nodes[j] for j in range(2)]
    for j in range(2):
        np.testing.assert_allclose(y.values[j], np.clip(1 - g[j] / 1.25, 0, None), atol=1e-12)
    assert chain_equals_interval(tree, spec, 1 / 8) <= 1e-12


def test_chain_single_edge():
    tree = build_tree([0], [1.3], 2)
    assert chain_equals_interval(tree, ProblemSpec.uniform(1, b=0.4, c=-0.2), 0.1) == 0.0


def test_chain_errors():
    with pytest.raises(NotAChain):
        chain_equals_interval(star(), ProblemSpec.uniform(3), 0.25)
    tree = build_tree([0, 1], [1, 1.5], 2)
    with pytest.raises(ValidationError):
        chain_equals_interval(tree, ProblemSpec([0.0, 1.0], [0.0, 0.0], [1.0, 1.0], 1.0), 0.25)


# ---------------------------------------------------------------- convergence


def test_convergence_exact_without_dynamics():
    tree = two_level(2.0, [0.5, 1.25, 1.5, 2.75, 3.25])
    spec = ProblemSpec(np.zeros(5), np.zeros(5), np.linspace(1, 2, 5), 1.0)
    study = convergence_study(tree, spec, [1 / 8, 1 / 16, 1 / 32])
    assert study.roundtrip_orders == ["exact", "exact"]
    assert study.kirchhoff_orders == ["exact", "exact"]
    assert study.energy_orders == ["exact"]


def test_convergence_generic_energy_order():
    tree, spec = instance("star-q1.5")
    study = convergence_study(tree, spec, [1 / 16, 1 / 32, 1 / 64, 1 / 128])
    assert all(1.7 <= o <= 2.3 for o in study.energy_orders)
    assert all(o >= 1.8 for o in study.roundtrip_orders)
    assert len(study.rows()) == 4 and study.rows()[0]["roundtrip_order"] is None


def test_convergence_level_checks():
    tree, spec = instance("star-q2")
    with pytest.raises(TooFewLevels):
        convergence_study(tree, spec, [0.1, 0.05])
    with pytest.raises(ValidationError):
        convergence_study(tree, spec, [0.1, 0.04, 0.02])


def test_observed_orders():
    assert observed_orders([4e-4, 1e-4]) == [pytest.approx(2.0)]
    assert observed_orders([1e-16, 1e-17]) == ["exact"]


@pytest.mark.parametrize("kids", [(2.5, 2.3), (2.7, 3.1, 2.2)])
@pytest.mark.parametrize("seed", [0, 2])
def test_roundtrip_envelope_unaligned_integer_q(kids, seed):
    # integer q with delay preimages off the mesh: pairwise orders wander, the
    # error stays under a fixed multiple of h^2
    tree = star(3.0, 0.8 if len(kids) == 2 else 1.0, kids)
    spec = random_spec(tree, seed)
    hs = [1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128]
    e = np.array(convergence_study(tree, spec, hs).roundtrip)
    assert np.all(e <= 5 * np.array(hs) ** 2)
    assert np.polyfit(np.log2(hs), np.log2(e), 1)[0] >= 1.5


# ---------------------------------------------------------------- uniqueness, stability, report


def test_direct_and_iterative_agree(generic):
    tree, spec = generic
    system, y = optimize(tree, spec, build_mesh(tree, 1 / 32))
    assert (solve_iterative(system) - y).max_abs() <= 1e-9


def test_norm_ratio_independent_of_y0(generic):
    tree, spec = generic
    mesh = build_mesh(tree, 1 / 16)
    r = [h1_norm(optimize(tree, spec.with_y0(y0), mesh)[1]) / y0 for y0 in (0.5, 1, 2, 10)]
    assert max(r) - min(r) <= 1e-12 * r[0]


def test_verify_report_passes(generic):
    tree, spec = generic
    report, system, y = verify(tree, spec, 1 / 32, seed=4, n_probes=40)
    assert report.passed, report.gates
    assert report.probe_run and report.optimality_margin > 0
    assert report.min_eigenvalue > 0
    assert all(v >= 0 for v in report.kirchhoff.values())
    assert all(v >= 0 for v in report.strong.values())
    assert set(report.kirchhoff) == {tree.labels[j] for j in range(tree.m) if tree.internal[j]}


def test_verify_flags_bad_solution():
    tree, spec = instance("star-q1.5")
    mesh = build_mesh(tree, 1 / 16)
    system, y = optimize(tree, spec, mesh)
    x = system.layout.free_values(y - system.phi)
    x[3] += 0.05
    bad = system.phi + system.layout.expand(x)
    report, _, _ = verify(tree, spec, 1 / 16, n_probes=20, system=system, y=bad)
    assert not report.gates["orthogonality"]
    assert not report.gates["optimality"]
    assert not report.passed
