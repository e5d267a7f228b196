#!/usr/bin/env python3
"""
Coherent Quantum Filter toolkit

Command line front end: reads a model file, runs one analysis or design
command on it and writes a JSON report to stdout (or --out). Logs go to
stderr.
"""

import argparse
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from analysis import (
    ccr_residual,
    check_stationarity,
    cost,
    dual_cost,
    gradient,
    gramian_residuals,
    gramians,
    uncertainty_margin,
)
from cqf_errors import CQFError, InputError
from filter_model import (
    CQFModel,
    Dims,
    collect_violations,
    dump_model,
    load_model,
    model_to_document,
    random_instance,
    validate,
)
from filter_schema import OptimizerConfig, RunReport
from matops import DEFAULT_HURWITZ_MARGIN
from optimizer import multistart, optimize
from oracle import DEFAULT_FD_STEP, triple_agreement
from weyl import weyl_scan

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_VERIFICATION = 3

logger = logging.getLogger(__name__)


class Timer:
    """Wall-clock seconds per named phase"""

    def __init__(self):
        self.phases: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = time.perf_counter() - start


def _env_seed() -> int:
    return int(os.getenv("CQF_SEED", "0"))


def _env_margin() -> float:
    return float(os.getenv("CQF_HURWITZ_MARGIN", str(DEFAULT_HURWITZ_MARGIN)))


def _load(args, timer: Timer) -> CQFModel:
    """Load and validate the model file, applying the Hurwitz margin."""
    with timer.phase("load"):
        model = load_model(args.model)
        validate(model.plant, model.observer, model.cost)
    margin = args.hurwitz_margin if args.hurwitz_margin is not None else _env_margin()
    return CQFModel(model.plant, model.observer, model.cost, margin)


def _seed(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


def _observer_payload(model: CQFModel) -> Dict:
    return model_to_document(model).observer.model_dump()


def cmd_validate(args, timer: Timer):
    with timer.phase("load"):
        model = load_model(args.model)
    with timer.phase("validate"):
        violations = collect_violations(model.plant, model.observer, model.cost)
    for violation in violations:
        logger.warning(f"Violation: {violation}")
    outputs = {"valid": not violations, "violations": violations}
    return outputs, EXIT_OK if not violations else EXIT_INPUT


def cmd_derive(args, timer: Timer):
    model = _load(args, timer)
    with timer.phase("derive"):
        ss = model.assemble()
        residual = ccr_residual(ss)
    outputs = {
        name: getattr(ss, name).tolist()
        for name in ("A", "B", "C", "a", "b1", "b2", "calA", "calB", "calC")
    }
    outputs["ccr_residual"] = residual.tolist()
    outputs["ccr_residual_norm"] = float(np.linalg.norm(residual))
    return outputs, EXIT_OK


def cmd_cost(args, timer: Timer):
    model = _load(args, timer)
    with timer.phase("gramians"):
        ss = model.assemble()
        g = gramians(ss, model.hurwitz_margin)
    outputs = {
        "cost": cost(ss, g),
        "dual_cost": dual_cost(ss, g),
        "gramian_residuals": gramian_residuals(ss, g),
        "uncertainty_margin": uncertainty_margin(ss, g),
    }
    return outputs, EXIT_OK


def _gradient_report(model: CQFModel, timer: Timer):
    with timer.phase("gradient"):
        ss = model.assemble()
        return gradient(ss, gramians(ss, model.hurwitz_margin), model.observer)


def cmd_grad(args, timer: Timer):
    report = _gradient_report(_load(args, timer), timer)
    outputs = {
        "cost": report.cost,
        "grad_norm": report.grad_norm,
        "dZ_dr": report.dZ_dr.tolist(),
        "dZ_dN1": report.dZ_dN1.tolist(),
        "stat1_residual": report.stat1_residual.tolist(),
        "stat2_residual": report.stat2_residual.tolist(),
    }
    return outputs, EXIT_OK


def cmd_check(args, timer: Timer):
    report = _gradient_report(_load(args, timer), timer)
    verdict = check_stationarity(report, args.tol)
    outputs = {
        "verdict": verdict.label,
        "cost": report.cost,
        "stat1_norm": verdict.stat1_norm,
        "stat2_norm": verdict.stat2_norm,
        "bound": verdict.tol * verdict.scale,
    }
    if args.strict and not verdict.stationary:
        return outputs, EXIT_VERIFICATION
    return outputs, EXIT_OK


def _load_config(path: Optional[str], margin: float) -> OptimizerConfig:
    """Optimizer settings; the command line margin applies unless the file sets hurwitz_margin."""
    if path is None:
        return OptimizerConfig(hurwitz_margin=margin)
    config = OptimizerConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    logger.info(f"Loaded optimizer configuration from {path}")
    if "hurwitz_margin" in config.model_fields_set:
        return config
    return config.model_copy(update={"hurwitz_margin": margin})


def cmd_optimize(args, timer: Timer):
    model = _load(args, timer)
    config = _load_config(args.config, model.hurwitz_margin)

    summaries = None
    best_index = 0
    with timer.phase("optimize"):
        if args.starts == 1 and not args.random_starts:
            result = optimize(model, config)
        else:
            outcome = multistart(
                model, config, args.starts, _seed(args), include_given=not args.random_starts
            )
            result, best_index = outcome.best, outcome.best_index
            summaries = [vars(summary) for summary in outcome.summaries]

    if args.model_out:
        Path(args.model_out).write_text(dump_model(result.model), encoding="utf-8")
        logger.info(f"Optimized model written to {args.model_out}")

    outputs = {
        "status": result.status.value,
        "cost": result.cost,
        "grad_norm": result.report.grad_norm,
        "verdict": result.verdict.label,
        "observer": _observer_payload(result.model),
        "trace": result.trace.to_dict(),
        "best_start": best_index,
        "starts": summaries,
        "config": config.model_dump(),
    }
    return outputs, EXIT_OK


def cmd_weyl_scan(args, timer: Timer):
    model = _load(args, timer)
    with timer.phase("scan"):
        scan = weyl_scan(model, args.samples, args.radius, _seed(args), args.tol)
    passed = scan.passes(args.tol)
    outputs = dict(scan.to_dict(), tol=args.tol, passed=passed)
    if not passed:
        logger.warning(f"Weyl derivatives exceed tolerance: total {scan.total:.3e}")
        if args.strict:
            return outputs, EXIT_VERIFICATION
    return outputs, EXIT_OK


def cmd_fd_check(args, timer: Timer):
    model = _load(args, timer)
    with timer.phase("oracles"):
        table = triple_agreement(model, args.h)
    passed = table.passes()
    outputs = dict(table.to_dict(), passed=passed)
    if not passed:
        logger.warning(
            f"Gradient oracles disagree: sensitivity {table.sensitivity_error:.3e}, "
            f"finite difference {table.fd_error:.3e}"
        )
        if args.strict:
            return outputs, EXIT_VERIFICATION
    return outputs, EXIT_OK


def parse_dims(text: str) -> Dims:
    try:
        values = [int(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"dimensions must be integers: {text!r}")
    if len(values) != 5 or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("expected five nonnegative integers n,m,nu,p,mu")
    return Dims(*values)


def cmd_random(args, timer: Timer) -> str:
    with timer.phase("generate"):
        model = random_instance(_seed(args), args.dims, q=args.q)
    return dump_model(model)


COMMANDS = {
    "validate": cmd_validate,
    "derive": cmd_derive,
    "cost": cmd_cost,
    "grad": cmd_grad,
    "check": cmd_check,
    "optimize": cmd_optimize,
    "weyl-scan": cmd_weyl_scan,
    "fd-check": cmd_fd_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="Write the report to this file instead of stdout")
    common.add_argument(
        "--no-timing",
        action="store_true",
        help="Leave wall-clock timings out of the report (byte-stable output)",
    )
    common.add_argument("--verbose", action="store_true", help="Enable debug logging")
    common.add_argument(
        "--hurwitz-margin",
        type=float,
        help="Required stability margin (default: CQF_HURWITZ_MARGIN or 1e-9)",
    )

    parser = argparse.ArgumentParser(
        description="Design and verify mean-square optimal coherent quantum filters"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def model_command(name, help_text):
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        cmd.add_argument("model", help="Path to the model JSON file")
        return cmd

    model_command("validate", "List specification violations")
    model_command("derive", "State-space matrices and CCR preservation residual")
    model_command("cost", "Steady-state cost and Gramian diagnostics")
    model_command("grad", "Cost gradient with respect to r and N1")

    check = model_command("check", "Stationarity verdict")
    check.add_argument("--tol", type=float, default=1e-6, help="Relative tolerance (default: 1e-6)")
    check.add_argument("--strict", action="store_true", help="Exit 3 if not stationary")

    opt = model_command("optimize", "Gradient descent over r and N1")
    opt.add_argument("--config", help="Optimizer configuration JSON file")
    opt.add_argument("--starts", type=int, default=1, help="Number of starts (default: 1)")
    opt.add_argument("--seed", type=int, help="Seed for random starts (default: CQF_SEED or 0)")
    opt.add_argument(
        "--random-starts",
        action="store_true",
        help="Draw every start at random instead of starting from the file's observer",
    )
    opt.add_argument("--model-out", help="Write the optimized model to this file")

    scan = model_command("weyl-scan", "Weyl variation derivatives over random queries")
    scan.add_argument("--samples", type=int, default=1000, help="Number of queries (default: 1000)")
    scan.add_argument("--radius", type=float, default=3.0, help="Frequency ball radius (default: 3)")
    scan.add_argument("--seed", type=int, help="Sampling seed (default: CQF_SEED or 0)")
    scan.add_argument("--tol", type=float, default=1e-6, help="Relative tolerance (default: 1e-6)")
    scan.add_argument("--strict", action="store_true", help="Exit 3 if the tolerance is exceeded")

    fd = model_command("fd-check", "Closed-form gradient against sensitivity and FD oracles")
    fd.add_argument("--h", type=float, default=DEFAULT_FD_STEP, help="Relative FD step (default: 1e-6)")
    fd.add_argument("--strict", action="store_true", help="Exit 3 if the oracles disagree")

    rnd = sub.add_parser("random", parents=[common], help="Generate a seeded random model")
    rnd.add_argument("--dims", type=parse_dims, required=True, help="n,m,nu,p,mu")
    rnd.add_argument("--seed", type=int, help="Generator seed (default: CQF_SEED or 0)")
    rnd.add_argument("--q", type=int, help="Number of estimated outputs (default: n)")
    return parser


def _inputs(args) -> Dict:
    inputs = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "out", "no_timing", "verbose") and value is not None
    }
    if "dims" in inputs:
        inputs["dims"] = list(inputs["dims"])
    if hasattr(args, "seed"):
        inputs["seed"] = _seed(args)
    return inputs


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def run(argv: Optional[List[str]] = None) -> int:
    """Execute one command and return its exit code."""
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # usage errors count as invalid input
        return EXIT_INPUT if e.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )

    timer = Timer()
    try:
        if args.command == "random":
            _emit(cmd_random(args, timer), args.out)
            return EXIT_OK
        outputs, code = COMMANDS[args.command](args, timer)
    except CQFError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        if e.details:
            print(f"  {e.details}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(f"Error: invalid JSON document: {e}", file=sys.stderr)
        return InputError.exit_code
    except (OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return InputError.exit_code

    report = RunReport(
        command=args.command,
        inputs=_inputs(args),
        outputs=outputs,
        timing=None if args.no_timing else timer.phases,
    )
    _emit(report.model_dump_json(indent=2), args.out)
    return code


def main():
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\nOperation cancelled by user.", file=sys.stderr)
        sys.exit(EXIT_INPUT)


if __name__ == "__main__":
    main()
