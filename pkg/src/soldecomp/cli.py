"""Command-line driver: ``run``, ``validate`` and ``preset``.

Exit codes: 0 success, 1 a theorem check failed, 2 invalid configuration,
3 solver failure, 4 input/output error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .analysis import (
    MAX_DENSE_NODES,
    ConvergenceTable,
    check_operator_inequalities,
    energy_monitor,
    error_field,
    error_report,
    reference_solution,
)
from .config import ConfigError, RunConfig, load_config, preset_configs, validate, PRESETS
from .decomposition import write_decomposition_csv
from .exceptions import InvalidArgumentError, NoConvergenceError, StabilityWarning
from .grid import GridFunction, write_grid_function_csv
from .operator import write_operator_coo
from .problems import BoxForcing, Problem
from .schemes import BLOCK_SCHEMES, TimeGrid, default_sigma, run_scheme, stability_threshold

__all__ = ["main", "execute", "EXIT_OK", "EXIT_CHECK_FAILED", "EXIT_VALIDATION", "EXIT_SOLVER", "EXIT_IO"]

log = logging.getLogger("soldecomp")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4


def _steps(times: Sequence[float], T: float, N: int) -> list[int]:
    return [int(round(t * N / T)) for t in times]


def _tag(t: float) -> str:
    return f"{t:.6g}".replace(".", "p")


class _Outputs:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name


def _single_run(cfg: RunConfig, problem: Problem, decomposition, solver, executor, out: _Outputs, result: dict):
    T, N = cfg.time.T, cfg.n_list[0]
    checkpoints = sorted(cfg.outputs.checkpoints or [T])
    steps = _steps(checkpoints, T, N)
    n_ref = cfg.reference_oversample * N
    refs = reference_solution(problem.operator, problem.forcing, problem.initial, T, checkpoints, n_ref)
    traj = run_scheme(
        cfg.scheme, problem.operator, problem.forcing, problem.initial, TimeGrid(T, N, cfg.time.sigma),
        decomposition=decomposition, cfg=solver, record=steps, executor=executor,
    )
    report = error_report(traj, dict(zip(steps, refs)), {"scheme": cfg.scheme})
    report.to_csv(out.path(cfg.outputs.report))
    for t, n, ref in zip(checkpoints, steps, refs):
        y = GridFunction(problem.grid, traj.at_step(n))
        if cfg.outputs.dump_solution:
            write_grid_function_csv(out.path(f"solution_t{_tag(t)}.csv"), y)
        if cfg.outputs.dump_error:
            write_grid_function_csv(out.path(f"error_t{_tag(t)}.csv"), error_field(y, ref))
    result.update(reference_steps=n_ref, final_eps2=report.records[-1].eps2, final_epsinf=report.records[-1].epsinf)
    return traj.warnings


def _convergence_study(cfg: RunConfig, problem: Problem, decomposition, solver, executor, out: _Outputs, result: dict):
    T, n_list = cfg.time.T, cfg.n_list
    coarse = min(n_list)
    checkpoints = sorted(set(cfg.outputs.checkpoints or [T * k / coarse for k in range(1, coarse + 1)]) | {T})
    n_ref = cfg.reference_oversample * max(n_list)
    refs = reference_solution(problem.operator, problem.forcing, problem.initial, T, checkpoints, n_ref)
    notes: list[str] = []
    taus, eps2, epsinf = [], [], []
    stem = Path(cfg.outputs.report)
    for n in n_list:
        steps = _steps(checkpoints, T, n)
        tg = TimeGrid(T, n, cfg.time.sigma)
        traj = run_scheme(
            cfg.scheme, problem.operator, problem.forcing, problem.initial, tg,
            decomposition=decomposition, cfg=solver, record=steps, executor=executor,
        )
        notes.extend(w for w in traj.warnings if w not in notes)
        report = error_report(traj, dict(zip(steps, refs)), {"scheme": cfg.scheme, "N": n})
        report.to_csv(out.path(f"{stem.stem}_N{n}{stem.suffix or '.csv'}"))
        taus.append(tg.tau)
        eps2.append(report.records[-1].eps2)
        epsinf.append(report.records[-1].epsinf)
        log.info("N=%d eps2=%.3e epsinf=%.3e", n, eps2[-1], epsinf[-1])
    table = ConvergenceTable.from_errors(n_list, taus, eps2, epsinf)
    table.to_csv(out.path(cfg.outputs.convergence))
    result.update(reference_steps=n_ref, fitted_order2=table.fitted_order2, fitted_orderinf=table.fitted_orderinf)
    return notes


def _theorem_check(cfg: RunConfig, problem: Problem, decomposition, solver, executor, out: _Outputs, result: dict):
    T, N = cfg.time.T, cfg.n_list[0]
    traj = run_scheme(
        cfg.scheme, problem.operator, problem.forcing, problem.initial, TimeGrid(T, N, cfg.time.sigma),
        decomposition=decomposition, cfg=solver, executor=executor,
    )
    mon = energy_monitor(traj, problem.operator, problem.forcing)
    with open(out.path("energy.csv"), "w") as fh:
        fh.write("n,lhs,rhs,margin\n")
        for n, (lhs, rhs) in enumerate(zip(mon.lhs, mon.rhs), start=1):
            fh.write(f"{n},{float(lhs)!r},{float(rhs)!r},{float(rhs - lhs)!r}\n")
    result.update(estimate=mon.estimate, energy_passed=bool(mon.passed), min_margin=float(np.min(mon.margin)))
    passed = mon.passed
    if decomposition is not None and problem.grid.size <= MAX_DENSE_NODES:
        rep = check_operator_inequalities(problem.operator, decomposition, tau=TimeGrid(T, N).tau)
        checks = {
            k: v for k, v in vars(rep).items() if k != "matrices" and isinstance(v, (int, float))
        }
        result["operator_checks"] = checks
    result["passed"] = bool(passed)
    return traj.warnings


_MODES = {"single_run": _single_run, "convergence_study": _convergence_study, "theorem_check": _theorem_check}


def execute(cfg: RunConfig, out_dir, threads: int = 1, reproducible: bool = False) -> dict:
    """Validate and run ``cfg``, writing CSV outputs and ``manifest.json`` into ``out_dir``.

    Raises
    ------
    ConfigError
        On validation errors.
    NoConvergenceError
        When an inner solve fails.
    OSError
        When outputs cannot be written.
    """
    findings = validate(cfg)
    errors = [f for f in findings if f.level == "error"]
    if errors:
        raise ConfigError("\n".join(map(str, errors)))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = _Outputs(out_dir)

    grid = cfg.build_grid()
    problem = Problem(grid, cfg.build_coefficients(), BoxForcing(grid, cfg.build_boxes()), cfg.time.T)
    decomposition = cfg.build_decomposition(grid) if cfg.scheme in BLOCK_SCHEMES else None
    solver = cfg.build_solver()
    p = decomposition.p if decomposition is not None else 1
    sigma = cfg.time.sigma if cfg.time.sigma is not None else default_sigma(cfg.scheme, p)

    if cfg.outputs.dump_decomposition and cfg.decomposition is not None:
        write_decomposition_csv(out.path("decomposition.csv"), cfg.build_decomposition(grid))
    if cfg.outputs.dump_operator:
        write_operator_coo(out.path("operator.coo"), problem.operator)

    threads = 1 if reproducible else max(1, int(threads))
    result: dict = {}
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilityWarning)
        if threads > 1 and decomposition is not None:
            with ThreadPoolExecutor(threads) as pool:
                notes = _MODES[cfg.mode](cfg, problem, decomposition, solver, pool, out, result)
        else:
            notes = _MODES[cfg.mode](cfg, problem, decomposition, solver, None, out, result)
    elapsed = time.perf_counter() - start

    manifest = {
        "config": cfg.to_dict(),
        "resolved": {
            "p": p,
            "sigma": sigma,
            "stability_threshold": stability_threshold(cfg.scheme, p),
            "tau": [cfg.time.T / n for n in cfg.n_list],
            "parallel_blocks_per_subdomain": [len(m) for m in decomposition.members] if decomposition else None,
        },
        "warnings": [str(f) for f in findings if f.level == "warning"] + list(notes),
        "results": result,
        "outputs": out.files,
        "threads": threads,
        "reproducible": reproducible,
        "elapsed_seconds": elapsed,
        "versions": {
            "soldecomp": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return manifest


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soldecomp", description="Domain-decomposition splitting schemes for the 2D heat equation.")
    parser.add_argument("--reproducible", action="store_true", help="single-threaded deterministic execution")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for per-block solves")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a JSON configuration (or a run manifest)")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory (default: next to the config)")
    val = sub.add_parser("validate", help="check a configuration without running it")
    val.add_argument("config")
    pre = sub.add_parser("preset", help="run a built-in experiment")
    pre.add_argument("name", help=", ".join(PRESETS))
    pre.add_argument("--out", required=True)
    pre.add_argument("--dry-run", action="store_true", help="only write the preset configurations")
    return parser


def _guarded(fn) -> int:
    try:
        return fn()
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except NoConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    def finish(manifest) -> int:
        passed = manifest["results"].get("passed", True)
        for w in manifest["warnings"]:
            print(w, file=sys.stderr)
        return EXIT_OK if passed else EXIT_CHECK_FAILED

    if args.command == "validate":
        def job():
            findings = validate(load_config(args.config))
            for f in findings:
                print(f)
            if any(f.level == "error" for f in findings):
                return EXIT_VALIDATION
            print("ok")
            return EXIT_OK
        return _guarded(job)

    if args.command == "run":
        def job():
            cfg = load_config(args.config)
            out_dir = Path(args.out) if args.out else Path(args.config).resolve().parent / cfg.name
            return finish(execute(cfg, out_dir, args.threads, args.reproducible))
        return _guarded(job)

    def job():
        configs = preset_configs(args.name)
        root = Path(args.out)
        code = EXIT_OK
        for cfg in configs:
            target = root / cfg.name
            target.mkdir(parents=True, exist_ok=True)
            with open(target / "config.json", "w") as fh:
                json.dump(cfg.to_dict(), fh, indent=2)
            if args.dry_run:
                continue
            log.info("running %s", cfg.name)
            code = max(code, finish(execute(cfg, target, args.threads, args.reproducible)))
        return code
    return _guarded(job)


if __name__ == "__main__":
    sys.exit(main())
