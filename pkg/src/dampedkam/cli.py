"""Command-line entry point.

Every subcommand writes ``<command>.csv`` and ``<command>.json`` into
``--out`` (and ``<command>.svg`` with ``--svg``) and prints the JSON summary
to standard output. Exit codes: 0 success, 1 numerical non-convergence,
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import svg
from .analysis import FloorOnlyError
from .errors import ConfigError, ConsistencyError, ConvergenceError, DomainError
from .model import EXAMPLE_LAMBDA, REGISTRY, TrigPoly, get_example, hamiltonian_from_dict
from .serialize import dumps, load_config, write_csv, write_json

THREADS_ENV = "DAMPEDKAM_THREADS"
logger = logging.getLogger("dampedkam")

_NAMED_FUNCTIONS = {
    "zero": TrigPoly((0.0,)),
    "sin": TrigPoly((0.0,), (1.0,)),
    "cos": TrigPoly((0.0, 1.0)),
    "-cos": TrigPoly((0.0, -1.0)),
}


def parse_function(text, allow_abs=True):
    """Named function (``zero``, ``sin``, ``cos``, ``-cos``, ``abs_sin_half``) or a JSON trig polynomial."""
    if isinstance(text, dict):
        return TrigPoly.from_dict(text)
    if text in _NAMED_FUNCTIONS:
        return _NAMED_FUNCTIONS[text]
    if text == "abs_sin_half" and allow_abs:
        return lambda x: np.abs(np.sin(0.5 * np.asarray(x, float)))
    try:
        return TrigPoly.from_dict(json.loads(text))
    except (json.JSONDecodeError, TypeError, KeyError, AttributeError) as exc:
        raise ConfigError(f"cannot parse function {text!r}") from exc


def build_system(args):
    from .flow import DampedSystem

    if args.hamiltonian is not None:
        spec = args.hamiltonian
        if isinstance(spec, str):
            try:
                spec = json.loads(spec)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"--hamiltonian is not valid JSON: {exc}") from exc
        h = hamiltonian_from_dict(spec)
    else:
        h = get_example(args.example, args.alpha)
    return DampedSystem(h, args.lam)


def _solver_params(args):
    from .solver import PeriodicGrid, SolverParams

    grid = PeriodicGrid(args.N)
    return grid, SolverParams(dt=args.dt, v_max=args.v_max, candidates=args.candidates)


def _finish(args, name, summary, header=None, columns=None, plot=None):
    out = Path(args.out)
    if header is not None:
        write_csv(out / f"{name}.csv", header, columns)
    write_json(out / f"{name}.json", summary)
    if args.svg and plot is not None:
        svg.plot(out / f"{name}.svg", **plot)
    print(dumps(summary))
    return 0


# ---------------------------------------------------------------------------
# subcommands


def cmd_flow(args):
    from .flow import StepSpec, tangent_flow

    sys_ = build_system(args)
    spec = StepSpec(dt=args.step, method=args.method, sample_every=args.sample_every)
    tr = tangent_flow(sys_, [args.x0], [args.p0], args.t, spec)
    det = tr.det
    summary = {"x_final": tr.x[-1, 0], "p_final": tr.p[-1, 0], "det_final": det[-1],
               "det_expected": math.exp(-sys_.lam * args.t), "method": spec.resolve(sys_)}
    plot = {"series": [("orbit", tr.x[:, 0], tr.p[:, 0], "line")], "title": "orbit", "xlabel": "x (lifted)",
            "ylabel": "p"}
    return _finish(args, "flow", summary, ["t", "x", "p", "det"], [tr.times, tr.x[:, 0], tr.p[:, 0], det], plot)


def cmd_solve(args):
    from .analysis import stationary_residual
    from .solver import stationary

    sys_ = build_system(args)
    grid, params = _solver_params(args)
    res = stationary(sys_, grid, params, tol=args.tol)
    r, ndiff = stationary_residual(res.solution, sys_)
    summary = {"steps": res.steps, "final_change": res.residual, "stationary_residual": r,
               "differentiable_points": ndiff, "N": grid.N, "dt": params.dt}
    if args.hamiltonian is None and args.example == "fig1":
        exact = -np.cos(grid.x) - 9 * math.sqrt(2) / 4
        summary["error_vs_closed_form"] = float(np.max(np.abs(res.solution.values - exact)))
    plot = {"series": [("u", grid.x, res.solution.values, "line")], "title": "stationary solution",
            "xlabel": "x", "ylabel": "u"}
    return _finish(args, "solve", summary, ["x", "u"], [grid.x, res.solution.values], plot)


def cmd_evolve(args):
    from .solver import GridFunction, evolve

    sys_ = build_system(args)
    grid, params = _solver_params(args)
    psi = GridFunction.sample(grid, parse_function(args.psi))
    u, _ = evolve(psi, sys_, args.t, params)
    summary = {"t": args.t, "N": grid.N, "dt": params.dt, "min": float(u.values.min()), "max": float(u.values.max())}
    plot = {"series": [("psi", grid.x, psi.values, "line"), ("T_t psi", grid.x, u.values, "line")],
            "title": f"t = {args.t}", "xlabel": "x", "ylabel": "u"}
    return _finish(args, "evolve", summary, ["x", "u"], [grid.x, u.values], plot)


def cmd_rate(args):
    from .analysis import error_curves, fit_rate
    from .solver import GridFunction, evolve, stationary

    sys_ = build_system(args)
    grid, params = _solver_params(args)
    ref = stationary(sys_, grid, params, tol=args.ref_tol).solution
    psi = GridFunction.sample(grid, parse_function(args.psi))
    n_snap = int(round(args.t_max / args.snap_every))
    times = [k * args.snap_every for k in range(1, n_snap + 1) if k * args.snap_every >= args.t_min - 1e-12]
    _, snaps = evolve(psi, sys_, args.t_max, params, snapshot_times=times)
    ec = error_curves(snaps, ref)
    f0 = fit_rate(ec.times, ec.c0)
    f1 = fit_rate(ec.times, ec.w1inf)
    summary = {"C": f0.C, "rate": f0.fitted_rate, "r2": f0.r_squared, "floor_time": f0.floor_time,
               "rate_over_lambda": f0.fitted_rate / sys_.lam,
               "w1inf": {"C": f1.C, "rate": f1.fitted_rate, "r2": f1.r_squared, "floor_time": f1.floor_time,
                         "rate_over_lambda": f1.fitted_rate / sys_.lam}}
    plot = {"series": [("C0", ec.times, ec.c0, "line"), ("W1,inf", ec.times, ec.w1inf, "line")],
            "title": "distance to the stationary solution", "xlabel": "t", "ylabel": "error", "logy": True}
    return _finish(args, "rate", summary, ["t", "c0_error", "w1inf_error"], [ec.times, ec.c0, ec.w1inf], plot)


def cmd_verify_kam(args):
    from .analysis import exactness_constant, kam_invariance_residual
    from .flow import rotation_number

    sys_ = build_system(args)
    P = parse_function(args.graph, allow_abs=False)
    res = kam_invariance_residual(sys_, P)
    c = float(exactness_constant(P, sys_.period)[0])
    rho = rotation_number(sys_, P)
    summary = {"residual": res, "exactness_constant": c, "rotation_number": rho,
               "invariant": bool(res <= args.residual_tol)}
    print(f"invariance residual: {res:.3e}", file=sys.stderr)
    print(f"exactness constant:  {c:.3e}", file=sys.stderr)
    print(f"rotation number:     {rho:.10f}", file=sys.stderr)
    x = np.arange(512) * (sys_.period / 512)
    plot = {"series": [("P", x, P(x), "line")], "title": "graph", "xlabel": "x", "ylabel": "p"}
    return _finish(args, "verify-kam", summary, plot=plot)


def cmd_splitting(args):
    from .flow import StepSpec, rotation_number
    from .hyperbolic import EnsembleSpec, compute_splitting, graph_torus, splitting_residual, transverse_exponent

    sys_ = build_system(args)
    P = parse_function(args.graph, allow_abs=False)
    rho = rotation_number(sys_, P)
    torus = graph_torus(P, args.n_theta, sys_.period, omega=rho)
    spec = StepSpec(dt=args.step)
    sp = compute_splitting(sys_, torus, spec)
    rep = splitting_residual(sys_, torus, sp.B, sp.monodromy)
    te = transverse_exponent(sys_, torus, EnsembleSpec(delta0=args.delta0, T=args.horizon, step=StepSpec(dt=args.step, sample_every=10)))
    summary = {"transport_residual": sp.monodromy.transport_residual, "es_residual": rep.es_residual,
               "det_residual": sp.monodromy.det_residual, "frame_det_min": sp.frame_det_min,
               "transverse_exponent": te.exponent, "on_torus": te.on_torus, "lambda": sys_.lam,
               "rotation_number": rho}
    plot = {"series": [("S", sp.theta, sp.S, "line"), ("B", sp.theta, sp.B, "line")], "title": "shear and B",
            "xlabel": "theta", "ylabel": ""}
    cols = [sp.theta, sp.DK[:, 0], sp.DK[:, 1], sp.V[:, 0], sp.V[:, 1], sp.S, sp.B, sp.Es[:, 0], sp.Es[:, 1]]
    return _finish(args, "splitting", summary, ["theta", "DK_x", "DK_p", "V_x", "V_p", "S", "B", "Es_x", "Es_p"],
                   cols, plot)


def _seed_spec(args, around=None):
    from .attractor import SeedSpec

    return SeedSpec((0.0, 2 * math.pi), (args.p_min, args.p_max), args.nx, args.np, around)


def cmd_attractor(args):
    from .attractor import SectionSpec, evolve_cloud, evolve_section, graph_test

    sys_ = build_system(args)
    if args.method == "section":
        cloud = evolve_section(sys_, args.T, SectionSpec(p0=args.p0))
    else:
        cloud = evolve_cloud(sys_, _seed_spec(args), args.T)
    v = graph_test(cloud, args.bins, args.graph_tol, sys_.period)
    summary = {"is_graph": v.is_graph, "max_vertical_spread": v.max_vertical_spread, "bins": v.bins,
               "empty_bins": v.empty_bins, "points": len(cloud.points), "excluded": cloud.excluded}
    xm = np.mod(cloud.points[:, 0], sys_.period)
    plot = {"series": [("attractor", xm, cloud.points[:, 1], "scatter")], "title": "attractor", "xlabel": "x",
            "ylabel": "p"}
    return _finish(args, "attractor", summary, ["x", "p"], [cloud.points[:, 0], cloud.points[:, 1]], plot)


def cmd_bifurcate(args):
    from .attractor import ScanSpec, SectionSpec, bifurcation_scan
    from .flow import DampedSystem

    if args.example not in REGISTRY:
        raise ConfigError(f"unknown family {args.example!r}")
    lam = args.lam

    def family(a):
        return DampedSystem(get_example(args.example, a), lam)

    scan = ScanSpec(coarse=args.coarse, depth=args.depth, T=args.T, bins=args.bins, graph_tol=args.graph_tol,
                    method=args.method, section=SectionSpec(p0=args.p0), seeds=_seed_spec(args))
    r = bifurcation_scan(family, (args.alpha_min, args.alpha_max), scan)
    summary = {"alpha_star": r.alpha_star, "bracket": list(r.bracket) if r.bracket else None,
               "verdict_low": r.verdict_low, "verdict_high": r.verdict_high, "message": r.message}
    if args.reference is not None and r.alpha_star is not None:
        summary["reference"] = args.reference
        summary["reference_gap"] = abs(r.alpha_star - args.reference)
        summary["reference_flag"] = bool(abs(r.alpha_star - args.reference) > args.reference_tol)
    rows = r.rows
    plot = {"series": [("spread", [q.alpha for q in rows], [q.spread for q in rows], "scatter")],
            "title": "vertical spread of the attractor", "xlabel": "alpha", "ylabel": "spread", "logy": True}
    return _finish(args, "bifurcate", summary, ["alpha", "is_graph", "spread"],
                   [[q.alpha for q in rows], [q.is_graph for q in rows], [q.spread for q in rows]], plot)


def cmd_perturb(args):
    from .attractor import perturbation_test

    sys_ = build_system(args)
    P0 = parse_function(args.graph, allow_abs=False)
    H1 = parse_function(args.perturbation, allow_abs=False)
    eps = [float(e) for e in args.eps]
    reports = perturbation_test(sys_, H1, eps, P0, T=args.T, seeds=_seed_spec(args, around=P0), bins=args.bins,
                                graph_tol=args.graph_tol)
    summary = {"runs": [r.__dict__ for r in reports]}
    plot = {"series": [("distance", eps, [r.distance for r in reports], "line")], "title": "distance to P0",
            "xlabel": "eps", "ylabel": "Hausdorff distance"}
    return _finish(args, "perturb", summary, ["eps", "is_graph", "spread", "exactness", "distance"],
                   [eps, [r.is_graph for r in reports], [r.spread for r in reports],
                    [r.exactness for r in reports], [r.distance for r in reports]], plot)


# ---------------------------------------------------------------------------
# parser


def _common(p):
    g = p.add_argument_group("system")
    g.add_argument("--config", help="JSON file with option values (keys as option names)")
    g.add_argument("--example", default="fig1", help=f"registry name: {', '.join(sorted(REGISTRY))}")
    g.add_argument("--alpha", type=float, default=None, help="family parameter for fig2 / fig2_interp")
    g.add_argument("--hamiltonian", default=None, help="inline JSON mechanical Hamiltonian (overrides --example)")
    g.add_argument("--lam", type=float, default=EXAMPLE_LAMBDA, help="damping index")
    o = p.add_argument_group("output")
    o.add_argument("--out", default=".", help="output directory")
    o.add_argument("--svg", action="store_true", help="also write an SVG plot")
    o.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or all)")
    o.add_argument("-v", "--verbose", action="store_true")


def _solver(p, N=512, dt=1e-3):
    g = p.add_argument_group("solver")
    g.add_argument("--N", type=int, default=N, help="grid points")
    g.add_argument("--dt", type=float, default=dt, help="semigroup time step")
    g.add_argument("--v-max", type=float, default=None, help="velocity bound (default max(6, 2 dx/dt))")
    g.add_argument("--candidates", type=int, default=17, help="odd number of enumerated velocities")


def _attractor_opts(p, T=30.0):
    g = p.add_argument_group("attractor")
    g.add_argument("--T", type=float, default=T, help="evolution time")
    g.add_argument("--bins", type=int, default=128)
    g.add_argument("--graph-tol", type=float, default=1e-2)
    g.add_argument("--p-min", type=float, default=-1.0)
    g.add_argument("--p-max", type=float, default=1.0)
    g.add_argument("--nx", type=int, default=32)
    g.add_argument("--np", type=int, default=8)


def build_parser():
    ap = argparse.ArgumentParser(prog="dampedkam", description="Weak-KAM laboratory for damped Tonelli systems")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="integrate one orbit with its tangent map")
    _common(p)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--p0", type=float, default=0.0)
    p.add_argument("--t", type=float, default=10.0)
    p.add_argument("--step", type=float, default=1e-3, help="integrator step")
    p.add_argument("--method", default="auto", choices=["auto", "strang", "yoshida4", "rk4"])
    p.add_argument("--sample-every", type=int, default=10)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("solve", help="stationary discounted solution")
    _common(p)
    _solver(p)
    p.add_argument("--tol", type=float, default=1e-4, help="distance to the discrete fixed point")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evolve", help="apply the semigroup to an initial function")
    _common(p)
    _solver(p)
    p.add_argument("--psi", default="cos", help="initial function (name or JSON trig polynomial)")
    p.add_argument("--t", type=float, default=1.0)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("rate", help="measure the exponential convergence rate")
    _common(p)
    _solver(p, N=256, dt=2e-3)
    p.add_argument("--psi", default="cos")
    p.add_argument("--t-min", type=float, default=0.5)
    p.add_argument("--t-max", type=float, default=30.0)
    p.add_argument("--snap-every", type=float, default=0.25)
    p.add_argument("--ref-tol", type=float, default=1e-11, help="accuracy of the reference fixed point")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("verify-kam", help="check an invariant graph")
    _common(p)
    p.add_argument("--graph", default="sin", help="graph P (name or JSON trig polynomial)")
    p.add_argument("--residual-tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_verify_kam)

    p = sub.add_parser("splitting", help="stable bundle and transverse exponent along a graph torus")
    _common(p)
    p.add_argument("--graph", default="sin")
    p.add_argument("--n-theta", type=int, default=256)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--delta0", type=float, default=1e-4)
    p.add_argument("--horizon", type=float, default=15.0)
    p.set_defaults(func=cmd_splitting)

    p = sub.add_parser("attractor", help="sample the attractor and test for a graph")
    _common(p)
    _attractor_opts(p)
    p.add_argument("--method", default="section", choices=["section", "cloud"])
    p.add_argument("--p0", type=float, default=3.0, help="height of the evolved circle (section method)")
    p.set_defaults(func=cmd_attractor)

    p = sub.add_parser("bifurcate", help="locate the graph / non-graph transition in a family")
    _common(p)
    _attractor_opts(p)
    p.add_argument("--method", default="section", choices=["section", "cloud"])
    p.add_argument("--p0", type=float, default=3.0)
    p.add_argument("--alpha-min", type=float, default=0.0)
    p.add_argument("--alpha-max", type=float, default=1.0)
    p.add_argument("--coarse", type=int, default=11)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--reference", type=float, default=None, help="expected transition value to compare with")
    p.add_argument("--reference-tol", type=float, default=0.05)
    p.set_defaults(func=cmd_bifurcate, example="fig2_interp")

    p = sub.add_parser("perturb", help="persistence of an invariant graph under perturbation")
    _common(p)
    _attractor_opts(p)
    p.add_argument("--graph", default="sin", help="invariant graph of the unperturbed system")
    p.add_argument("--perturbation", default='{"cos": [0.0, 0.1], "sin": [0.0, 0.1]}',
                   help="potential H1 as JSON trig polynomial")
    p.add_argument("--eps", type=float, nargs="+", default=[0.01, 0.02, 0.05])
    p.set_defaults(func=cmd_perturb, p_min=-0.2, p_max=0.2, nx=64, np=5)
    return ap


def _apply_config(parser, argv):
    """Use values from ``--config`` as defaults of the chosen subcommand; explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = load_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions} - {"help", "config"}
    norm = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(norm) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {unknown}")
    sub.set_defaults(**norm)
    return parser.parse_args(argv)


def _set_threads(n):
    import numba

    if n is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        _set_threads(args.threads)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except (ConvergenceError, ConsistencyError) as exc:
        print(f"error: numerical non-convergence: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 1
    except FloorOnlyError as exc:
        print(f"error: numerical non-convergence: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DomainError, ValueError, KeyError) as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
