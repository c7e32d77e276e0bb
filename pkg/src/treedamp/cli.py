"""Command line: ``treedamp solve|simulate|verify|convergence --problem FILE --h H``.

Exit codes: 0 success, 1 invalid input, 2 a verification gate failed.
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .cauchy import residual_forward, solve_forward
from .errors import NotPositiveDefinite, StepRejected, TooFewLevels, ValidationError
from .fileio import dumps17, load_problem, read_controls, write_table, write_trajectories
from .galerkin import assemble, energy, extract_control, solve
from .grid import build_mesh, h1_norm
from .verify import convergence_study, kirchhoff_residual, strong_residual, verify

log = logging.getLogger("treedamp")

MODES = ("solve", "simulate", "verify", "convergence")


@dataclass
class RunConfig:
    mode: str
    problem: str
    h: float
    levels: int = 3
    out: str = "out"
    tol: float = 1e-10
    seed: int = 0
    controls: str = None
    probes: int = 200

    def validate(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValidationError(f"--h must be positive, got {self.h}")
        if not self.tol > 0:
            raise ValidationError(f"--tol must be positive, got {self.tol}")
        if self.mode == "convergence" and self.levels < 3:
            raise TooFewLevels(f"convergence needs --levels >= 3, got {self.levels}")
        if self.mode == "simulate" and not self.controls:
            raise ValidationError("simulate needs --controls")


def _by_label(tree, values):
    return {str(tree.labels[j]): v for j, v in values.items()}


def _vertex_values(tree, y):
    return {str(lab): float(y.values[j][-1]) for j, lab in enumerate(tree.labels) if tree.internal[j]}


def _norms(y, y0):
    full = h1_norm(y)
    return {
        "W21": full,
        "W21_trimmed": h1_norm(y, trimmed=True),
        "W21_over_abs_y0": full / abs(y0) if y0 != 0 else None,
    }


def _mesh_info(mesh, system=None):
    info = {"h": mesh.h, "node_count": mesh.node_count}
    if system is not None:
        info["dof_count"] = system.n
    return info


def _write_summary(out, summary):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps17(summary) + "\n")
    return path


def _solve_summary(tree, spec, mesh, system, y, seed):
    return {
        "J": energy(tree, spec, mesh, y),
        "vertex_values": _vertex_values(tree, y),
        "kirchhoff_residuals": _by_label(tree, kirchhoff_residual(tree, spec, y)),
        "strong_residuals": dict(zip(map(str, tree.labels), strong_residual(tree, spec, y))),
        "optimality_margin": None,
        "norms": _norms(y, spec.y0),
        "seed": seed,
        "mesh": _mesh_info(mesh, system),
    }


def run(config):
    """Execute one CLI run; returns the process exit code."""
    try:
        config.validate()
        tree, spec = load_problem(config.problem)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        mesh = build_mesh(tree, config.h)
        if config.mode == "solve":
            system = assemble(tree, spec, mesh)
            y = solve(system)
            u = extract_control(tree, spec, mesh, y)
            write_trajectories(config.out, y, u)
            _write_summary(config.out, _solve_summary(tree, spec, mesh, system, y, config.seed))
            return 0

        if config.mode == "simulate":
            u = read_controls(config.controls, mesh)
            y = solve_forward(tree, spec, u, mesh)
            write_trajectories(config.out, y)
            tail = [
                float(np.max(np.abs(y.values[j][mesh.target_index[j] :])))
                for j in range(tree.m)
                if not tree.internal[j]
            ]
            _write_summary(
                config.out,
                {
                    "J": energy(tree, spec, mesh, y),
                    "vertex_values": _vertex_values(tree, y),
                    "forward_residuals": dict(zip(map(str, tree.labels), residual_forward(tree, spec, y, u))),
                    "target_violation": max(tail) if tail else 0.0,
                    "norms": _norms(y, spec.y0),
                    "seed": config.seed,
                    "mesh": _mesh_info(mesh),
                },
            )
            return 0

        if config.mode == "verify":
            try:
                report, system, y = verify(tree, spec, config.h, config.tol, config.seed, config.probes)
            except NotPositiveDefinite as exc:
                print(f"gate failed: {exc}", file=sys.stderr)
                return 2
            mesh = y.mesh
            u = extract_control(tree, spec, mesh, y)
            write_trajectories(config.out, y, u)
            summary = _solve_summary(tree, spec, mesh, system, y, config.seed)
            summary["optimality_margin"] = report.optimality_margin if report.probe_run else None
            summary["checks"] = {
                "probe_count": report.n_probes,
                "probe_run": report.probe_run,
                "orthogonality": report.orthogonality,
                "min_eigenvalue": report.min_eigenvalue,
                "uniqueness_deviation": report.uniqueness_deviation,
                "roundtrip_deviation": report.roundtrip_deviation,
                "constraint_violation": report.constraint_violation,
                "kirchhoff_residuals_h_half": {str(k): v for k, v in report.kirchhoff_refined.items()},
                "tol": report.tol,
            }
            summary["gates"] = report.gates
            _write_summary(config.out, summary)
            for name, ok in report.gates.items():
                log.info("gate %-22s %s", name, "pass" if ok else "FAIL")
            if not report.passed:
                failed = [k for k, ok in report.gates.items() if not ok]
                print(f"gate failed: {', '.join(failed)}", file=sys.stderr)
                return 2
            return 0

        levels = [config.h / 2**k for k in range(config.levels)]
        study = convergence_study(tree, spec, levels)
        os.makedirs(config.out, exist_ok=True)
        write_table(os.path.join(config.out, "convergence.csv"), study.rows())
        _write_summary(
            config.out,
            {
                "h": study.h,
                "roundtrip_deviation": study.roundtrip,
                "roundtrip_orders": study.roundtrip_orders,
                "kirchhoff_residual": study.kirchhoff,
                "kirchhoff_orders": study.kirchhoff_orders,
                "J": study.energy,
                "energy_decrement_orders": study.energy_orders,
                "seed": config.seed,
            },
        )
        return 0
    except (ValidationError, StepRejected, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser():
    p = argparse.ArgumentParser(prog="treedamp", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--problem", required=True, help="problem file (JSON)")
    p.add_argument("--h", type=float, required=True, help="mesh spacing")
    p.add_argument("--levels", type=int, default=3, help="refinement levels for convergence")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--tol", type=float, default=1e-10, help="relative tolerance of the gates")
    p.add_argument("--seed", type=int, default=0, help="seed of the optimality probe")
    p.add_argument("--controls", help="controls for simulate: CSV 'edge,t,u' or a directory of edge<id>_u.csv")
    p.add_argument("--probes", type=int, default=200, help="random directions in the optimality probe")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = RunConfig(
        mode=args.mode,
        problem=args.problem,
        h=args.h,
        levels=args.levels,
        out=args.out,
        tol=args.tol,
        seed=args.seed,
        controls=args.controls,
        probes=args.probes,
    )
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
