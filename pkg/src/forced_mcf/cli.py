"""Command-line entry point: ``forced-mcf {run,converge,tumour,mesh}``.

Each subcommand takes an optional config file (or preset name) followed by
``--key value`` overrides for any config key, and writes its artifacts and
an ``effective.cfg`` provenance file into the output directory.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import VARIABLES, ErrorRecord, asymptotic_eoc, convergence_study, error_tracker
from .config import PRESETS, ConfigError, keys, parse_config, write_provenance
from .flow_solver import FlowBreakdown, SolverConfig, StepDiagnostics, run
from .problems import TumourParams, manufactured_problem, pure_mcf_problem, tumour_initial_data, tumour_problem
from .surface_mesh import make_sphere_mesh, quality_report, write_mesh, write_vtk

log = logging.getLogger("forced_mcf")


def build_problem(cfg):
    if cfg.problem == "manufactured":
        return manufactured_problem(cfg.forcing, eps=cfg.eps, R0=cfg.R0, R1=cfg.R1)
    if cfg.problem == "pure_mcf":
        return pure_mcf_problem(cfg.R0)
    return tumour_problem(tumour_params(cfg))


def tumour_params(cfg):
    return TumourParams(gamma=cfg.gamma, d=cfg.d, a=cfg.a, b=cfg.b, delta=cfg.delta,
                        eps=cfg.eps, amplitude=cfg.amplitude, seed=cfg.seed)


def build_mesh(cfg, frequency=None):
    radius = 1.0 if cfg.problem == "tumour" else cfg.R0
    return make_sphere_mesh(radius=radius, degree=cfg.k, frequency=frequency or cfg.mesh_frequency)


def solver_config(cfg, t0=None):
    return SolverConfig(tau=cfg.tau, T=cfg.T, q=cfg.q, scheme=cfg.scheme, tol=cfg.tol,
                        output_every=cfg.output_every, startup=cfg.startup,
                        t0=cfg.t0 if t0 is None else t0)


def state_fields(state):
    out = {}
    if state.u.shape[1] == 1:
        out["u"] = state.u[:, 0]
    else:
        for i in range(state.u.shape[1]):
            out[f"u{i + 1}"] = state.u[:, i]
    out["H"] = state.H
    out["nu"] = state.nu
    return out


def write_diagnostics(path, diagnostics):
    with open(path, "w") as fh:
        fh.write(StepDiagnostics.CSV_HEADER + "\n")
        for d in diagnostics:
            fh.write(d.csv_row() + "\n")


def _flow(problem, mesh, x0, scfg, on_step, diag_path, **initial):
    """Run the flow; diagnostics are written even when it breaks down."""
    try:
        traj = run(problem, mesh, x0, scfg, on_step=on_step, **initial)
    except FlowBreakdown as exc:
        write_diagnostics(diag_path, exc.result.diagnostics)
        raise
    write_diagnostics(diag_path, traj.diagnostics)
    return traj


def cmd_run(cfg, out):
    problem = build_problem(cfg)
    mesh, x0 = build_mesh(cfg)
    scfg = solver_config(cfg)
    n_steps = scfg.n_steps
    record = ErrorRecord()
    track = error_tracker(problem, mesh, x0, record) if problem.exact is not None else None

    def on_step(n, state):
        if n % cfg.output_every == 0 or n == n_steps:
            fields = state_fields(state)
            fields["v"] = state.v
            write_vtk(out / f"state_{n:05d}.vtk", mesh, state.x, fields, f"t={state.t!r}")
        if track:
            track(n, state)

    try:
        _flow(problem, mesh, x0, scfg, on_step, out / "diagnostics.csv")
    finally:
        if track:
            with open(out / "errors.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", *VARIABLES])
                for t, e in zip(record.times, record.steps):
                    w.writerow([repr(t), *(repr(e[v]) if v in e else "" for v in VARIABLES)])
    print(f"run: {n_steps} steps on {mesh.n_nodes} nodes, output in {out}")
    return 0


def cmd_converge(cfg, out):
    problem = build_problem(cfg)
    if problem.exact is None:
        raise ConfigError(f"problem {cfg.problem!r} has no exact solution to converge against")
    cells = [(cfg.time_frequency, t) for t in cfg.taus]
    cells += [(f, cfg.space_tau) for f in cfg.frequencies if (f, cfg.space_tau) not in cells]
    table = convergence_study(problem, None, None, T=cfg.T, scheme=cfg.scheme, q=cfg.q, cells=cells,
                              tol=cfg.tol, startup=cfg.startup)
    table.write_csv(out / "eoc.csv")
    failed = [r for r in table.results if r.failed]
    for sweep, fixed in (("time", cfg.time_frequency), ("space", cfg.space_tau)):
        for var in VARIABLES:
            if sweep == "time":
                _, _, rates = table.temporal(fixed, var, taus=cfg.taus)
            else:
                _, _, rates = table.spatial(fixed, var)
            print(f"{sweep:<5} {var:>2}: " + " ".join(f"{r:5.2f}" for r in rates)
                  + f"  | asymptotic {asymptotic_eoc(rates):.2f}")
    for r in failed:
        print(f"cell n={r.frequency} tau={r.tau:g} failed: {r.failed}", file=sys.stderr)
    return 1 if failed else 0


def pattern_amplitude(u, params):
    return float(np.max(np.abs(u[:, 0] - (params.a + params.b))))


def cmd_tumour(cfg, out):
    params = tumour_params(cfg)
    problem = tumour_problem(params)
    mesh, x0 = build_mesh(cfg)
    u0, nu0, H0 = tumour_initial_data(mesh, x0, params, tau=cfg.pre_tau, T_pre=cfg.pre_T, q=cfg.q)
    scfg = solver_config(cfg, t0=cfg.pre_T)
    pending = sorted(t for t in cfg.snapshot_times if cfg.pre_T - 1e-12 <= t <= cfg.T + 1e-12)
    summary = []

    def on_step(n, state):
        while pending and abs(state.t - pending[0]) < 0.5 * cfg.tau:
            t_snap = pending.pop(0)
            write_vtk(out / f"tumour_t{t_snap:g}.vtk", mesh, state.x, state_fields(state), f"t={state.t!r}")
            r = np.linalg.norm(state.x, axis=1)
            summary.append((t_snap, pattern_amplitude(state.u, params), float(r.mean()), float(r.max())))

    try:
        _flow(problem, mesh, x0, scfg, on_step, out / "diagnostics.csv", u0=u0, nu0=nu0, H0=H0)
    finally:
        with open(out / "snapshots.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "pattern_amplitude", "mean_radius", "max_radius"])
            for row in summary:
                w.writerow([repr(v) for v in row])
    print(f"tumour: {mesh.n_nodes} nodes, {len(summary)} snapshots in {out}")
    return 0


def cmd_mesh(cfg, out):
    mesh, x = build_mesh(cfg)
    write_mesh(out / "mesh.txt", mesh, x)
    write_vtk(out / "mesh.vtk", mesh, x)
    report = quality_report(mesh, x)
    text = "".join(f"{k}: {v}\n" for k, v in report.items())
    (out / "quality.txt").write_text(text)
    print(text, end="")
    return 0


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "tumour": cmd_tumour, "mesh": cmd_mesh}


def build_parser():
    parser = argparse.ArgumentParser(prog="forced-mcf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "integrate one problem; VTK series and diagnostics CSV",
        "converge": "manufactured-solution convergence study; EOC CSV",
        "tumour": "pre-integrate a Turing pattern, then run the tumour flow",
        "mesh": "write an icosphere mesh and its quality report",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("config", nargs="?",
                       help=f"config file or preset name ({', '.join(PRESETS)})")
        p.add_argument("-v", "--verbose", action="count", default=0)
        group = p.add_argument_group("config overrides")
        for key in keys():
            group.add_argument(f"--{key}", dest=f"set_{key}", metavar="VALUE")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("set_") and v is not None}
    try:
        cfg = parse_config(args.config, overrides)
        out = Path(cfg.output)
        write_provenance(cfg, out, args.command)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FlowBreakdown, ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
