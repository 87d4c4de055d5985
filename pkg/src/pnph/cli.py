"""Command line entry point.

Subcommands read a configuration file, write numeric results to files and
log progress to standard error.  Exit status is 0 on success, 1 on a solver
failure and 2 on a configuration error or an unknown subcommand.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from .assembly import NotConverged, SingularSystem
from .cell_problems import (
    CertificationFailed,
    solve_cell_problems,
    verify_traction_expansion,
    verify_volume_expansion,
)
from .config import ConfigErrors, config_to_dict, parse_config
from .geometry import EmptyPaving, build_paving, measures
from .mesh import MisalignedInclusion, build_box_mesh, build_domain_mesh, write_mesh
from .output import atomic_write, concentrations_csv, solution_csv
from .pb_solver import NewtonDiverged, recover_concentrations, solve_macro_pb, solve_micro_pb
from .study import run_convergence_study

logger = logging.getLogger("pnph")

# subcommand names are part of the command line contract
SUBCOMMANDS = ("solve-cell", "compute-a0", "solve-micro", "solve-macro", "converge",
               "verify-lemmas")

_SOLVER_ERRORS = (NotConverged, SingularSystem, NewtonDiverged, CertificationFailed)
_CONFIG_ERRORS = (ConfigErrors, EmptyPaving, MisalignedInclusion)


def _out_dir(args, default):
    path = args.out or default
    os.makedirs(path, exist_ok=True)
    return path


def _cell(cfg):
    return solve_cell_problems(cfg.geometry.cell(), cfg.material_model(), cfg.study.h_cell,
                               tolerance=cfg.solver.linear_tol)


def cmd_solve_cell(cfg, args):
    cc = _cell(cfg)
    out = _out_dir(args, "cell")
    files = {"L.csv": solution_csv(cc.L)}
    for i, Ni in enumerate(cc.N):
        files[f"N{i}.csv"] = solution_csv(Ni)
    for name, text in files.items():
        atomic_write(os.path.join(out, name), text)
    write_mesh(cc.cell_mesh, os.path.join(out, "cell_mesh.txt"))
    logger.info("cell fields written to %s", out)


def _a0_record(cfg, cc):
    g = cfg.geometry
    d = cc.diagnostics
    return {
        "dim": g.dim,
        "cell": {"inclusion_lower": list(g.inclusion_lower),
                 "inclusion_upper": list(g.inclusion_upper), "h": cfg.study.h_cell},
        "material": config_to_dict(cfg)["material"],
        "A0": [float(v) for v in cc.A0.ravel()],
        "certification": {
            # key name fixed by the output format
            "eq318_vs_eq319": d["dual_formula_gap"],
            "mean_B": d["mean_B"],
            "interface_residual": d["interface_residual"],
            "min_eigenvalue": d["min_eigenvalue"],
        },
    }


def cmd_compute_a0(cfg, args):
    cc = _cell(cfg)
    text = json.dumps(_a0_record(cfg, cc), indent=2) + "\n"
    atomic_write(args.out or "a0.json", text)
    logger.info("A0 = %s", cc.A0.tolist())


def _write_potential(out, phi, ions, stem):
    conc = recover_concentrations(phi, ions)
    atomic_write(os.path.join(out, f"{stem}.csv"), solution_csv(phi))
    atomic_write(os.path.join(out, f"{stem}_concentrations.csv"), concentrations_csv(conc))


def cmd_solve_micro(cfg, args):
    g = cfg.geometry
    eps = cfg.study.epsilon
    paved = build_paving(g.domain_lower, g.domain_upper, eps, g.cell(), g.boundary_gap)
    mesh = build_domain_mesh(paved, cfg.study.h_cell)
    phi = solve_micro_pb(mesh, cfg.material_model(), cfg.ion_system(), eps, cfg.newton_config())
    out = _out_dir(args, "micro")
    _write_potential(out, phi, cfg.ion_system(), "phi")
    write_mesh(mesh, os.path.join(out, "mesh.txt"))
    logger.info("micro solve: %d DOFs, %d Newton iterations", mesh.dof_count,
                phi.meta["iterations"])


def cmd_solve_macro(cfg, args):
    g = cfg.geometry
    cc = _cell(cfg)
    _, surf, pore = measures(g.cell())
    h = cfg.study.macro_h or min(cfg.study.epsilons) * cfg.study.h_cell
    mesh = build_box_mesh(g.domain_lower, g.domain_upper, h)
    phi0 = solve_macro_pb(mesh, cc.A0, pore, surf * cfg.material.g, cfg.ion_system(),
                          cfg.newton_config())
    out = _out_dir(args, "macro")
    _write_potential(out, phi0, cfg.ion_system(), "phi0")
    logger.info("macro solve: %d DOFs, %d Newton iterations", mesh.dof_count,
                phi0.meta["iterations"])


def cmd_converge(cfg, args):
    report = run_convergence_study(cfg)
    out = _out_dir(args, "report")
    atomic_write(os.path.join(out, cfg.study.csv_name), report.to_csv())
    atomic_write(os.path.join(out, cfg.study.json_name), report.to_json())
    logger.info("fitted rate %.4f over %d rows", report.fitted_rate, len(report.rows))
    if not report.complete:
        raise NotConverged(len(report.rows), float("nan"))


def expansion_probe(x):
    """Product of ``sin(pi x_i)``; vanishes on the boundary of the unit box."""
    return np.prod(np.sin(np.pi * np.asarray(x)), axis=-1)


def expansion_force(x):
    """Smooth, non-periodic volume force used by the volume expansion check."""
    x = np.asarray(x)
    return 1.0 + x[..., 0]


def cmd_verify_expansions(cfg, args):
    g = cfg.geometry
    mat = cfg.material_model()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["expansion", "epsilon", "residual", "residual_over_eps"])
    for eps in sorted(cfg.study.epsilons, reverse=True):
        paved = build_paving(g.domain_lower, g.domain_upper, eps, g.cell(), g.boundary_gap)
        t = verify_traction_expansion(paved, mat, expansion_probe, cfg.study.h_cell)
        v = verify_volume_expansion(paved, mat, expansion_force, expansion_probe, cfg.study.h_cell)
        for name, r in (("surface", t), ("volume", v)):
            w.writerow([name, repr(eps), repr(r["residual"]), repr(r["residual_over_eps"])])
    atomic_write(args.out or "expansions.csv", buf.getvalue())


_HANDLERS = {
    "solve-cell": cmd_solve_cell,
    "compute-a0": cmd_compute_a0,
    "solve-micro": cmd_solve_micro,
    "solve-macro": cmd_solve_macro,
    "converge": cmd_converge,
    "verify-lemmas": cmd_verify_expansions,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="pnph", description="Periodic homogenization toolkit for Poisson-Boltzmann problems.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--threads", type=int, default=1, metavar="N")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        logger.error("--threads must be at least 1")
        return 2
    try:
        cfg = parse_config(args.config)
    except OSError as exc:
        logger.error("cannot read config: %s", exc)
        return 2
    except ConfigErrors as exc:
        for e in exc.errors:
            logger.error("%s", e)
        return 2
    try:
        _HANDLERS[args.command](cfg, args)
    except _CONFIG_ERRORS as exc:
        logger.error("%s", exc)
        return 2
    except _SOLVER_ERRORS as exc:
        logger.error("solver failure: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
