"""Command-line experiment runner.

Examples
--------
    hjbfem --problem exp1 --s 0.5 --degree 3 --refine adaptive --max-dofs 30000
    hjbfem --problem exp3 --a 0.5 --degree 2 --refine uniform --rounds 5
    hjbfem --problem my_problem.yaml --out results/

Outputs in ``--out``: summary.csv, trace.csv, mesh_final.txt,
solution_final.txt, indicators_elements.csv, indicators_edges.csv.

Exit codes: 0 converged, 1 Howard's method hit itermax in some round,
2 invalid configuration, 3 solver failure, 4 Cordes condition violated
(with --strict-cordes).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .adapt import AdaptConfig, refinement_loop, write_summary
from .config import ConfigError, custom_benchmark, load_config
from .experiments import builtin_exp1, builtin_exp2, builtin_exp3
from .forms import SchemeParams
from .mesh import write_mesh
from .monge_ampere import DEFAULT_GRID, DomainError
from .problem import CordesViolation
from .solver import SolverError, write_trace
from .space import ConfigurationError, write_function

log = logging.getLogger("hjbfem")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_SOLVER, EXIT_CORDES = 0, 1, 2, 3, 4

# config-file keys that may override command-line values
_OVERRIDABLE = {
    "degree", "sigma", "theta", "refine", "max_dofs", "tol", "itermax", "xi", "grid",
    "out", "sequential", "rounds", "eta_tol", "s", "N", "a", "unknown", "control_mode",
    "strict_cordes", "warm_start", "workers",
}


def _grid(text):
    if isinstance(text, (list, tuple)):
        text = "x".join(str(v) for v in text)
    try:
        lam, theta = (int(v) for v in str(text).lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 16x16, got {text!r}") from exc
    return lam, theta


def build_parser():
    ap = argparse.ArgumentParser(prog="hjbfem", description=__doc__.split("\n\n")[0])
    ap.add_argument("--problem", default="exp1",
                    help="exp1, exp2, exp3 or a YAML problem file")
    ap.add_argument("--config", help="YAML file whose entries override the flags")
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--sigma", type=float, default=None, help="penalty (default by degree)")
    ap.add_argument("--theta", type=float, default=0.2, help="maximum-marking fraction")
    ap.add_argument("--refine", choices=("uniform", "adaptive"), default="adaptive")
    ap.add_argument("--rounds", type=int, default=10, help="refinement rounds")
    ap.add_argument("--max-dofs", dest="max_dofs", type=int, default=100_000)
    ap.add_argument("--eta-tol", dest="eta_tol", type=float, default=0.0,
                    help="stop when the largest local indicator is at most this")
    ap.add_argument("--tol", type=float, default=1e-10, help="Howard increment tolerance")
    ap.add_argument("--itermax", type=int, default=50, help="Howard iteration limit")
    ap.add_argument("--xi", type=float, default=None, help="det W lower bound (exp3)")
    ap.add_argument("--grid", type=_grid, default=DEFAULT_GRID, help="control grid LxT")
    ap.add_argument("--control-mode", dest="control_mode", choices=("grid", "continuous"),
                    default="grid", help="Monge-Ampere control maximisation")
    ap.add_argument("--s", type=float, default=0.5, help="exp1 regularity exponent")
    ap.add_argument("--N", type=int, default=None, help="exp1/exp2 checkerboard size")
    ap.add_argument("--a", type=float, default=0.5, help="exp3 kink location")
    ap.add_argument("--unknown", action="store_true", help="exp3 with f = 1, g = 0")
    ap.add_argument("--out", default="out")
    ap.add_argument("--sequential", action="store_true",
                    help="single-threaded assembly (bit-reproducible)")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--warm-start", dest="warm_start", action="store_true",
                    help="start Howard's method from the previous round's solution")
    ap.add_argument("--strict-cordes", dest="strict_cordes", action="store_true")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def resolve_options(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    cfg = {}
    problem = args.problem
    for source in (args.config, problem if problem.endswith((".yaml", ".yml")) else None):
        if source:
            cfg.update(load_config(source))
    for key, value in cfg.items():
        key = key.replace("-", "_")
        if key in _OVERRIDABLE:
            setattr(args, key, _grid(value) if key == "grid" else value)
    args.problem_config = cfg
    is_file = problem.endswith((".yaml", ".yml"))
    args.problem = str(cfg.get("problem", "custom" if is_file else problem))
    return args


def make_benchmark(args):
    name = str(args.problem)
    if name == "exp1":
        return builtin_exp1(float(args.s), int(args.N or 20))
    if name == "exp2":
        return builtin_exp2(int(args.N or 10))
    if name == "exp3":
        a = None if args.unknown else float(args.a)
        return builtin_exp3(a, xi=args.xi, grid=tuple(args.grid), control_mode=args.control_mode)
    if name == "custom":
        return custom_benchmark(args.problem_config, xi=args.xi, grid=args.grid,
                                control_mode=args.control_mode)
    raise ConfigError(f"unknown problem {name!r}")


def run(args) -> int:
    """Execute one experiment and write its outputs; returns the exit code."""
    out = Path(args.out)
    try:
        bench = make_benchmark(args)
        workers = 1 if args.sequential else int(args.workers or min(4, os.cpu_count() or 1))
        params = SchemeParams(degree=int(args.degree), sigma=args.sigma, tol=float(args.tol),
                              itermax=int(args.itermax), workers=workers,
                              strict_cordes=bool(args.strict_cordes))
        config = AdaptConfig(theta=float(args.theta), tol=float(args.eta_tol),
                             itermax=int(args.rounds), max_dofs=int(args.max_dofs))
    except (ConfigError, ConfigurationError, DomainError, ValueError, TypeError) as exc:
        print(f"hjbfem: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s, degree %d, %s refinement", bench.description, params.degree,
             args.refine)
    try:
        history = refinement_loop(bench.mesh, bench.problem, params, config, bench.exact,
                                  mode=args.refine, warm_start=bool(args.warm_start))
    except CordesViolation as exc:
        print(f"hjbfem: {exc}", file=sys.stderr)
        return EXIT_CORDES
    except (SolverError, DomainError) as exc:
        print(f"hjbfem: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_summary(history.rows, out / "summary.csv")
    write_trace(history.trace, out / "trace.csv")
    final = history.final()
    write_mesh(final.mesh, out / "mesh_final.txt")
    u = final.result.u
    if bench.ma is not None:
        u = -u  # report the Monge-Ampere solution, not the solver unknown
    write_function(u, out / "solution_final.txt")
    final.indicators.write_csv(out / "indicators_elements.csv", out / "indicators_edges.csv")
    for row in history.rows:
        print(f"ndofs={row['ndofs']:>8d}  err_h={row['err_h']:.4e}  EOC_h={row['EOC_h']:.3f}"
              f"  eta={row['eta']:.4e}  howard={row['howard_iterations']}")
    print(f"stopped: {history.stop_reason}; outputs in {out}")
    if not history.converged:
        print("hjbfem: Howard's method did not converge in every round", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = resolve_options(argv)
    except (ConfigError, argparse.ArgumentTypeError) as exc:
        print(f"hjbfem: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
