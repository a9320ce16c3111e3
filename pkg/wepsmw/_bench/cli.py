#!/usr/bin/env python3
"""
Command-line front end of the waveguide eigenvalue solver.

    wepsmw solve          --config FILE   residual inverse iteration
    wepsmw precond-bench  --config FILE   inner GMRES convergence per coarse grid
    wepsmw scaling        --config FILE   timing table over problem sizes
    wepsmw cache build    --config FILE   precompute and store the coupling matrix
    wepsmw cache inspect  --config FILE PATH

Tables go to stdout, diagnostics to stderr. The exit status is 0 on
success, 1 on a numerical failure and 2 on a configuration or I/O error.
The default worker count is read from WEPSMW_WORKERS and the default log
level from WEPSMW_LOG_LEVEL.
"""

import argparse
import logging
import os
import sys
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from wepsmw._bench.config import RunConfig, load_config
from wepsmw._bench.report import (
    OUTER_FIELDS,
    PRECOND_FIELDS,
    SCALING_FIELDS,
    ConsoleTable,
    duration,
    outer_rows,
    summary,
    write_csv,
    write_eigenpair,
)
from wepsmw._util.cache import read_coupling
from wepsmw.discretization import DiscreteProblem, normalize_phase
from wepsmw.generic import (
    CacheMismatch,
    ConfigError,
    DimensionMismatch,
    NoConvergence,
    RightHalfPlane,
    WepError,
)
from wepsmw.krylov import gmres
from wepsmw.resinv import resinv
from wepsmw.schur import SchurAction
from wepsmw.spectral import fast_sine_size
from wepsmw.smw import (
    SmwPreconditioner,
    build_coarse_grid,
    coupling_header,
    load_coupling,
    save_coupling,
)

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV: str = "WEPSMW_LOG_LEVEL"

EXIT_OK: int = 0
EXIT_NUMERICAL: int = 1
EXIT_CONFIG: int = 2

# Tolerance of the reference solve the error curves are measured against.
REFERENCE_TOL: float = 1e-13


def _random_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def build_preconditioner(
    config: RunConfig,
    problem: DiscreteProblem,
    coarse_n_z: Optional[int] = None,
    boundary_refinement: Optional[bool] = None,
    use_cache: bool = True,
) -> SmwPreconditioner:
    """
    SMW preconditioner for the configured shift, via the cache if one is set.

    A missing cache file is created; an existing one must match the run.
    """
    schur = SchurAction(problem, config.sigma)
    grid = build_coarse_grid(
        problem.n_x,
        problem.n_z,
        config.coarse_n_z if coarse_n_z is None else coarse_n_z,
        config.boundary_refinement if boundary_refinement is None else boundary_refinement,
    )
    path = config.cache_path if use_cache else None
    if path is not None and os.path.exists(path):
        return load_coupling(path, schur, grid, config.workers)
    preconditioner = SmwPreconditioner(schur, grid, config.workers)
    if path is not None:
        save_coupling(preconditioner, path)
    return preconditioner


def cmd_solve(config: RunConfig) -> int:
    """
    Compute one eigenpair and write eigenpair.csv and outer.csv.
    """
    problem = config.problem()
    preconditioner = build_preconditioner(config, problem)

    v0 = None
    if config.v0 == "random":
        rng = np.random.default_rng(config.seed)
        v0 = normalize_phase(_random_vector(rng, problem.size))

    status = EXIT_OK
    try:
        result = resinv(
            problem,
            config.sigma,
            config.gamma0,
            v0,
            config.outer_tol,
            config.inner_policy,
            config.max_outer,
            preconditioner=preconditioner,
            settings=config.settings(),
        )
    except NoConvergence as e:
        logger.error("%s", e)
        result = e.result
        status = EXIT_NUMERICAL

    os.makedirs(config.out_dir, exist_ok=True)
    write_eigenpair(os.path.join(config.out_dir, "eigenpair.csv"), result, config.seed)
    write_csv(
        os.path.join(config.out_dir, "outer.csv"), OUTER_FIELDS, outer_rows(result, config.seed)
    )

    table = ConsoleTable(
        [
            ("iteration", "d"),
            ("gamma_re", ".10f"),
            ("gamma_im", ".10f"),
            ("residual", ".3e"),
            ("inner_iterations", "d"),
            ("inner_tolerance", ".1e"),
            ("seconds", ".2f"),
        ]
    )
    for row in outer_rows(result, config.seed):
        table.print(row)
    print(summary(result, config.seed))
    logger.info("Setup of the preconditioner took %s", duration(preconditioner.setup_seconds))
    return status


def _layouts(config: RunConfig) -> List[bool]:
    layouts = [config.boundary_refinement]
    if config.compare_uniform:
        layouts.append(not config.boundary_refinement)
    return layouts


def cmd_precond_bench(config: RunConfig) -> int:
    """
    Solve S(sigma) x = c for a seeded c with every configured coarse grid.

    Records per-iteration residuals and relative errors against a reference
    solution computed with tolerance REFERENCE_TOL.
    """
    problem = config.problem()
    rng = np.random.default_rng(config.seed)
    rhs = _random_vector(rng, problem.n_interior)

    reference: Optional[np.ndarray] = None
    rows: List[Dict] = []
    table = ConsoleTable(
        [
            ("N_z", "d"),
            ("N_x", "d"),
            ("layout", ""),
            ("iterations", "d"),
            ("residual", ".3e"),
            ("error", ".3e"),
            ("setup_seconds", ".2f"),
            ("solve_seconds", ".2f"),
        ]
    )
    for coarse_n_z in config.coarse_list:
        for refined in _layouts(config):
            preconditioner = build_preconditioner(
                config, problem, coarse_n_z, refined, use_cache=False
            )
            schur = preconditioner.schur
            if reference is None:
                reference = gmres(
                    schur, preconditioner, rhs, REFERENCE_TOL, config.restart, config.maxit
                ).solution
            ref_norm = float(np.linalg.norm(reference))
            errors: List[float] = [1.0]

            def record(_: int, x: np.ndarray) -> None:
                errors.append(float(np.linalg.norm(x - reference)) / ref_norm)

            report = gmres(
                schur,
                preconditioner,
                rhs,
                config.tol,
                config.restart,
                config.maxit,
                callback=record,
            )
            layout = "refined" if refined else "uniform"
            grid = preconditioner.grid
            for iteration, (residual, error) in enumerate(zip(report.history, errors)):
                rows.append(
                    {
                        "n_z": problem.n_z,
                        "n_x": problem.n_x,
                        "N_z": grid.N_z,
                        "N_x": grid.N_x,
                        "layout": layout,
                        "iteration": iteration,
                        "residual": residual,
                        "error": error,
                        "seed": config.seed,
                    }
                )
            table.print(
                {
                    "N_z": grid.N_z,
                    "N_x": grid.N_x,
                    "layout": layout,
                    "iterations": report.iterations,
                    "residual": report.residual,
                    "error": errors[-1],
                    "setup_seconds": preconditioner.setup_seconds,
                    "solve_seconds": report.seconds,
                }
            )

    write_csv(os.path.join(config.out_dir, "precond.csv"), PRECOND_FIELDS, rows)
    return EXIT_OK


def _apply_seconds(preconditioner: SmwPreconditioner, seed: int, repeats: int = 3) -> float:
    rng = np.random.default_rng(seed)
    c = _random_vector(rng, preconditioner.shape[0])
    start = time.perf_counter()
    for _ in range(repeats):
        preconditioner(c)
    return (time.perf_counter() - start) / repeats


def _scaling_row(config: RunConfig, method: str) -> Dict:
    start = time.perf_counter()
    problem = config.problem()
    preconditioner = build_preconditioner(config, problem, use_cache=False)
    precompute = preconditioner.setup_seconds

    status = "converged"
    try:
        result = resinv(
            problem,
            config.sigma,
            config.gamma0,
            None,
            config.outer_tol,
            config.inner_policy,
            config.max_outer,
            preconditioner=preconditioner,
            settings=config.settings(method),
        )
    except NoConvergence as e:
        result = e.result
        status = "no-convergence"
    total = time.perf_counter() - start
    return {
        "n_z": problem.n_z,
        "n_x": problem.n_x,
        "unknowns": problem.size,
        "N_z": preconditioner.grid.N_z,
        "N_x": preconditioner.grid.N_x,
        "method": method,
        "total_seconds": total,
        "precompute_seconds": precompute,
        "precompute_fraction": precompute / total if total > 0 else 0.0,
        "apply_seconds": _apply_seconds(preconditioner, config.seed),
        "outer_iterations": len(result.history),
        "inner_iterations": sum(record.inner_iterations for record in result.history),
        "gamma_re": result.gamma.real,
        "gamma_im": result.gamma.imag,
        "status": status,
        "seed": config.seed,
    }


def cmd_scaling(config: RunConfig) -> int:
    """
    Time complete runs over the configured sizes and coarse grids.

    n_x is the smallest order at or above n_z + 4 with a fast DST-I.
    Runs above `max_unknowns`, and larger runs once a coarse grid has
    exceeded `max_seconds`, are skipped with a note.
    """
    rows: List[Dict] = []
    table = ConsoleTable(
        [
            ("n_z", "d"),
            ("N_z", "d"),
            ("method", ""),
            ("unknowns", "d"),
            ("total_seconds", ".2f"),
            ("precompute_seconds", ".2f"),
            ("precompute_fraction", ".2f"),
            ("apply_seconds", ".4f"),
            ("inner_iterations", "d"),
            ("status", ""),
        ]
    )
    coarse_list = config.scaling_n_z_list or config.coarse_list
    over_time: Dict[Tuple[int, str], bool] = {}
    for n_z in config.sizes:
        n_x = fast_sine_size(n_z + 4)
        unknowns = n_x * n_z + 2 * n_z
        for coarse_n_z in coarse_list:
            for method in config.scaling_methods:
                note = ""
                if unknowns > config.max_unknowns:
                    note = f"skipped: {unknowns} unknowns > {config.max_unknowns}"
                elif over_time.get((coarse_n_z, method), False):
                    note = f"skipped: a smaller run exceeded {config.max_seconds:.0f}s"
                if note:
                    row = {
                        "n_z": n_z,
                        "n_x": n_x,
                        "unknowns": unknowns,
                        "N_z": coarse_n_z,
                        "method": method,
                        "status": "skipped",
                        "note": note,
                        "seed": config.seed,
                    }
                    logger.warning("n_z=%d N_z=%d %s: %s", n_z, coarse_n_z, method, note)
                else:
                    row = _scaling_row(config.resized(n_z, coarse_n_z, n_x), method)
                    if row["total_seconds"] > config.max_seconds:
                        over_time[(coarse_n_z, method)] = True
                rows.append(row)
                table.print(row)

    write_csv(os.path.join(config.out_dir, "scaling.csv"), SCALING_FIELDS, rows)
    return EXIT_OK


def cmd_cache(config: RunConfig, action: str, path: Optional[str]) -> int:
    """
    Build a coupling cache for the configured run, or describe one.
    """
    path = path or config.cache_path
    if path is None:
        raise ConfigError("no cache path given (argument or [cache] path)")
    if action == "build":
        problem = config.problem()
        schur = SchurAction(problem, config.sigma)
        grid = build_coarse_grid(
            problem.n_x, problem.n_z, config.coarse_n_z, config.boundary_refinement
        )
        save_coupling(SmwPreconditioner(schur, grid, config.workers), path)

    header, _ = read_coupling(path)
    for name, value in header.describe().items():
        print(f"{name}\t{value}")

    problem = config.problem()
    grid = build_coarse_grid(
        problem.n_x, problem.n_z, config.coarse_n_z, config.boundary_refinement
    )
    try:
        header.validate(coupling_header(SchurAction(problem, config.sigma), grid))
        print("config\tmatches")
    except CacheMismatch as e:
        print(f"config\t{e}")
    return EXIT_OK


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI file describing the run")
    common.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    common.add_argument("--workers", type=int, help="worker threads for the precomputation")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed of random vectors")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging")

    parser = argparse.ArgumentParser(
        prog="wepsmw", description="Waveguide eigenvalue solver with an SMW preconditioner"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("solve", parents=[common], help="compute one eigenpair")
    commands.add_parser("precond-bench", parents=[common], help="inner solver convergence")
    commands.add_parser("scaling", parents=[common], help="timings over problem sizes")
    cache = commands.add_parser("cache", parents=[common], help="coupling matrix cache")
    cache.add_argument("action", choices=["build", "inspect"])
    cache.add_argument("path", nargs="?", help="cache file (default: [cache] path)")
    return parser.parse_args(argv)


def _configure_logging(verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
        if not isinstance(logging.getLevelName(level), int):
            level = "WARNING"
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand and return its exit status.
    """
    args = parse_args(argv)
    _configure_logging(args.verbose)
    try:
        config = load_config(args.config, args.override, args.workers, args.seed, args.out)
        if args.command == "solve":
            return cmd_solve(config)
        if args.command == "precond-bench":
            return cmd_precond_bench(config)
        if args.command == "scaling":
            return cmd_scaling(config)
        return cmd_cache(config, args.action, args.path)
    except (ConfigError, CacheMismatch, DimensionMismatch, RightHalfPlane, OSError) as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (WepError, ArithmeticError) as e:
        print(f"{args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
