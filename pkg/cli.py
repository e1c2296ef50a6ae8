"""Command-line front end: coefficient files, well-posedness checks, solves, experiments.

Examples:
  python cli.py gen-coeff --kind hermitian --seed 7 --out coeff.json
  python cli.py check --coeff coeff.json
  python cli.py solve --coeff hermitian --seed 7 --u0 modes:1,3 --out-dir out
  python cli.py verify all --config docs/default_config.json --coeff identity
  python cli.py sweep --coeff identity --radius 0.05
  python cli.py dump --coeff identity --operator T_A --out ta.bin

Exit codes: 0 all verdicts pass, 2 at least one FAIL (including an ill-posed or gapless
operator), 1 usage, configuration or input-file error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from analysis_norms import NormError, write_norm_report
from coefficients import CoefficientError, estimate_kappa, field_from_config, make_class, save_field
from dirichlet_solver import BoundaryData, IllPosed, TraceToleranceError, check_wellposed, solve_dirichlet
from matrix_functions import NoGap, NotConverged
from operator_forge import ForgeError, assemble_D, assemble_Q, assemble_TA, assemble_theta, dump_matrix
from settings import (
    COEFFICIENT_KINDS,
    DEFAULT_N,
    DEFAULT_SYSTEM_SIZE,
    EXPERIMENT_IDS,
    REPORT_FILE_SCHEMA,
    ConfigError,
    RunConfig,
    load_run_config,
)
from torus_grid import GridError, TGrid, TorusGrid
from utils import SchemaValidationError, parse_int_list, validate_against_schema, write_csv, write_json
from verifier import GOLDEN_ID, VerdictReport, run_all, run_experiment, run_openness, summarize_reports

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAIL = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _coefficient_override(raw: Optional[str]) -> Optional[Dict[str, Any]]:
    if raw is None:
        return None
    if raw in COEFFICIENT_KINDS:
        return {"kind": raw, "path": None}
    if not os.path.exists(raw):
        raise ConfigError(f"--coeff must be one of {', '.join(COEFFICIENT_KINDS)} or an existing file")
    return {"path": raw}


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    coefficient = _coefficient_override(getattr(args, "coeff", None))
    if args.seed is not None:
        coefficient = {**(coefficient or {}), "seed": args.seed}
    overrides = {
        "N": args.N,
        "M": args.M,
        "m": args.m,
        "seed": args.seed,
        "trials": getattr(args, "trials", None),
        "coefficient": coefficient,
    }
    if getattr(args, "no_refine", False):
        overrides["refine"] = False
    return load_run_config(args.config, **overrides)


def _write_reports(reports: Sequence[VerdictReport], out_dir: str) -> None:
    for report in reports:
        stem = report.id.lower()
        for name, frame in sorted(report.tables.items()):
            path = os.path.join(out_dir, f"{stem}_{name}.csv")
            write_csv(path, frame)
            report.artifacts[name] = path
        payload = report.to_dict()
        validate_against_schema(REPORT_FILE_SCHEMA, payload)
        write_json(os.path.join(out_dir, f"{stem}.json"), payload)
    write_json(os.path.join(out_dir, "summary.json"), summarize_reports(reports))


def _exit_for(reports: Sequence[VerdictReport]) -> int:
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def _cmd_gen_coeff(args: argparse.Namespace) -> int:
    grid = TorusGrid(args.N or DEFAULT_N, args.L)
    field_ = make_class(
        args.kind, grid, m=args.m or DEFAULT_SYSTEM_SIZE, seed=args.seed or 0, roughness=args.roughness,
        kappa_target=args.kappa, amplitude=args.amplitude,
    )
    save_field(field_, args.out)
    print(f"wrote {args.out} (kind={field_.kind}, kappa={estimate_kappa(field_):.4f})")
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    A = field_from_config(config.coefficient, TorusGrid(config.N, config.L), config.m)
    kappa = estimate_kappa(A)
    maps = check_wellposed(A, config.sigma_floor)
    adjoint = check_wellposed(A.adjoint(), config.sigma_floor)
    payload = {
        "coefficient": A.describe(),
        "kappa": kappa,
        "verdict": maps.verdict(),
        "adjoint_verdict": adjoint.verdict(),
    }
    if args.out:
        write_json(args.out, payload)
    print(f"well-posed: {maps.wellposed} (sigma_min(S)={maps.sigma_min_S:.4e}, "
          f"adjoint sigma_min(S)={adjoint.sigma_min_S:.4e})")
    return EXIT_OK if maps.wellposed else EXIT_FAIL


def _boundary_from_arg(raw: str, grid: TorusGrid, m: int) -> BoundaryData:
    """``modes:1,3`` (sum of e^{ikx} in every component) or a CSV path."""
    if raw.startswith("modes:"):
        try:
            modes = parse_int_list(raw[len("modes:"):])
        except ValueError as exc:
            raise ConfigError(f"Malformed --u0 {raw!r}: {exc}") from exc
        if not modes or 0 in modes:
            raise ConfigError("--u0 modes must be nonzero integers")
        values = sum(grid.mode(k) for k in modes)
        return BoundaryData.project(grid, np.tile(values, (m, 1)))
    try:
        frame = pd.read_csv(raw)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"Cannot read boundary data {raw}: {exc}") from exc
    try:
        return BoundaryData.from_frame(grid, frame)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_solve(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    grid = TorusGrid(config.N, config.L)
    A = field_from_config(config.coefficient, grid, config.m)
    estimate_kappa(A)
    u0 = _boundary_from_arg(args.u0, grid, config.m)
    maps = check_wellposed(A, config.sigma_floor)
    if not maps.wellposed:
        print(f"ill-posed: sigma_min(S)={maps.sigma_min_S:.4e}", file=sys.stderr)
        return EXIT_FAIL
    tgrid = TGrid(config.resolved_t_min, config.resolved_t_max, config.M)
    solution = solve_dirichlet(maps, u0, tgrid, config.tol("trace", 5e-2), strict=False)
    write_csv(os.path.join(args.out_dir, "boundary.csv"), u0.to_frame())
    write_csv(os.path.join(args.out_dir, "solution.csv"), solution.to_frame())
    metrics = {**solution.summary(), **maps.verdict()}
    write_json(os.path.join(args.out_dir, "metrics.json"), {"config": config.to_dict(), "metrics": metrics})
    write_norm_report(os.path.join(args.out_dir, "norms.csv"), solution.summary(), config.config_hash())
    print(f"trace error {solution.trace_error:.3e}, decay {solution.decay_ratio:.3e}")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    target = args.experiment
    if target == "all":
        reports = run_all(config, gate=not args.no_gate)
    elif target in EXPERIMENT_IDS or target == GOLDEN_ID:
        reports = run_experiment(target, config)
    else:
        raise ConfigError(f"Unknown experiment {target!r}; choose all, {GOLDEN_ID} or one of {', '.join(EXPERIMENT_IDS)}")
    _write_reports(reports, args.out_dir)
    for report in reports:
        print(f"{report.id:<11} {'PASS' if report.passed else 'FAIL'}")
    return _exit_for(reports)


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if args.radius is not None:
        config = config.replace(tolerances={**config.tolerances, "openness_radius": args.radius})
    report = run_openness(config)
    _write_reports([report], args.out_dir)
    print(f"OPENNESS    {'PASS' if report.passed else 'FAIL'} (flip radius: {report.constants.get('flip_radius')})")
    return _exit_for([report])


def _cmd_dump(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    grid = TorusGrid(config.N, config.L)
    A = field_from_config(config.coefficient, grid, config.m)
    if args.operator == "D":
        op = assemble_D(grid, config.m)
    elif args.operator == "T_A":
        op = assemble_TA(A)
    elif args.operator == "Theta_t":
        op = assemble_theta(A, args.t)
    else:
        op = assemble_Q(A, args.t)
    dump_matrix(op, args.out)
    print(f"wrote {args.out} ({op.label}, {op.dim}x{op.dim} complex128)")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, coeff: bool = True) -> None:
    p.add_argument("--config", default=None, help="RunConfig JSON (schema 1)")
    if coeff:
        p.add_argument("--coeff", default=None,
                       help=f"coefficient kind ({', '.join(COEFFICIENT_KINDS)}) or coefficient JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--N", type=int, default=None, help="grid points (power of two)")
    p.add_argument("--M", type=int, default=None, help="t-grid samples")
    p.add_argument("--m", type=int, default=None, help="system size")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cli.py", description="Half-space Dirichlet problem numerical lab")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-coeff", help="generate a coefficient field file")
    p_gen.add_argument("--kind", choices=COEFFICIENT_KINDS, default="hermitian")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--N", type=int, default=None)
    p_gen.add_argument("--m", type=int, default=None)
    p_gen.add_argument("--L", type=float, default=2.0 * np.pi)
    p_gen.add_argument("--roughness", type=int, default=2)
    p_gen.add_argument("--kappa", type=float, default=0.5)
    p_gen.add_argument("--amplitude", type=float, default=0.5)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen_coeff)

    p_check = sub.add_parser("check", help="accretivity and well-posedness verdict")
    _add_common(p_check)
    p_check.add_argument("--out", default=None)
    p_check.set_defaults(func=_cmd_check)

    p_solve = sub.add_parser("solve", help="solve the Dirichlet problem for one datum")
    _add_common(p_solve)
    p_solve.add_argument("--u0", required=True, help="modes:k1,k2,... or boundary CSV (x, re_0, im_0, ...)")
    p_solve.add_argument("--out-dir", default="solution")
    p_solve.set_defaults(func=_cmd_solve)

    p_verify = sub.add_parser("verify", help="run one experiment or all of them")
    p_verify.add_argument("experiment", help=f"all, {GOLDEN_ID} or one of {', '.join(EXPERIMENT_IDS)}")
    _add_common(p_verify)
    p_verify.add_argument("--trials", type=int, default=None)
    p_verify.add_argument("--no-refine", action="store_true", help="skip the (2N, 2M) comparison")
    p_verify.add_argument("--no-gate", action="store_true", help="do not run the A=I self-test first")
    p_verify.add_argument("--out-dir", default="reports")
    p_verify.set_defaults(func=_cmd_verify)

    p_sweep = sub.add_parser("sweep", help="perturbation sweep of sigma_min(S)")
    _add_common(p_sweep)
    p_sweep.add_argument("--radius", type=float, default=None)
    p_sweep.add_argument("--out-dir", default="reports")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_dump = sub.add_parser("dump", help="write an assembled operator as raw complex128")
    _add_common(p_dump)
    p_dump.add_argument("--operator", choices=["D", "T_A", "Theta_t", "Q_t"], default="T_A")
    p_dump.add_argument("--t", type=float, default=1.0)
    p_dump.add_argument("--out", required=True)
    p_dump.set_defaults(func=_cmd_dump)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.func(args))
    except (IllPosed, NoGap, NotConverged, TraceToleranceError) as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigError, CoefficientError, GridError, ForgeError, NormError, SchemaValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
