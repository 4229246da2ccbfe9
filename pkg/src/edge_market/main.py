#!/usr/bin/env python3
"""
Edge Market

Command-line front end that generates edge-computing markets, solves them
for market equilibria, certifies and audits the results, and runs sweeps.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from edge_market.models.market import CertificateReport, EquilibriumSolution, MarketInstance
from edge_market.models.options import (
    CesOptions,
    EgEngine,
    EgOptions,
    NetProfitOptions,
    PropBrOptions,
    PropDynOptions,
    StepSchedule,
)
from edge_market.models.reports import DynamicsTrace
from edge_market.models.scenario import EcScenario, GenerationConfig
from edge_market.services.baselines_audit import compare_schemes
from edge_market.services.dynamics import ces_dual_decomposition, propbr_run, propdyn_run, write_trace_csv
from edge_market.services.eg_core import certificate_passes, kkt_certificate, solve_eg
from edge_market.services.netprofit import (
    budget_sweep,
    netprofit_certificate,
    netprofit_residual,
    solve_netprofit,
    sweep_table,
)
from edge_market.services.scenario_gen import build_instance, generate
from edge_market.services.sweeps import (
    budget_ratio_sweep,
    convergence_study,
    price_perturbation,
    size_sweep,
    table_fieldnames,
)
from edge_market.utils.constants import (
    CERTIFICATE_FILE,
    CLI_CERTIFICATE_TOL,
    DEFAULT_MAX_ITERS,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_PRICE_TOL,
    EXIT_CERTIFICATE_FAILED,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_USAGE,
    INSTANCE_FILE,
    LOGGING_FORMAT,
    LOGGING_LEVEL,
    PRETTY_FLOAT_FORMAT,
    SCENARIO_FILE,
    SOLUTION_FILE,
)
from edge_market.utils.exceptions import ConvergenceError, EdgeMarketError
from edge_market.utils.io import DATA_DIR, load_json, save_json, write_csv

logger = logging.getLogger(__name__)

METHODS = ("eg", "propdyn", "ces", "propbr", "netprofit")
SWEEP_KINDS = ("budget-ratio", "budget-scale", "size", "perturb", "convergence")
# CES and PropBR are approximate equilibria; only feasibility is certified
FEASIBILITY_FIELDS = ("clearing_slack", "budget_slack")


class UsageError(Exception):
    """Bad flag values or unreadable input files"""


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def format_table(rows: Sequence[Dict[str, Any]], fieldnames: Optional[List[str]] = None) -> str:
    """Aligned plain-text table with rounded floats"""
    fieldnames = fieldnames or table_fieldnames(rows)
    cells = [
        [PRETTY_FLOAT_FORMAT.format(row[name]) if isinstance(row.get(name), float) else str(row.get(name, "")) for name in fieldnames]
        for row in rows
    ]
    widths = [max([len(name)] + [len(line[k]) for line in cells]) for k, name in enumerate(fieldnames)]
    lines = ["  ".join(name.rjust(width) for name, width in zip(fieldnames, widths))]
    lines.extend("  ".join(cell.rjust(width) for cell, width in zip(line, widths)) for line in cells)
    return "\n".join(lines)


def resolve_input(path: str) -> Path:
    """A bare name that is not an existing file is looked up among the shipped fixtures"""
    candidate = Path(path)
    if not candidate.exists() and (DATA_DIR / path).exists():
        return DATA_DIR / path
    return candidate


class EdgeMarketApp:
    """Main application class"""

    def __init__(self, out=None):
        """
        Initialize the application

        Args:
            out: Stream for command results (stdout by default)
        """
        self.out = out or sys.stdout

    def emit(self, text: str):
        print(text, file=self.out)

    def load_instance(self, path: str) -> MarketInstance:
        """Read a MarketInstance JSON file, falling back to the shipped fixtures"""
        try:
            return MarketInstance.from_document(load_json(resolve_input(path)))
        except FileNotFoundError as exc:
            raise UsageError(f"instance file not found: {path}") from exc
        except (ValidationError, ValueError) as exc:
            raise UsageError(f"invalid instance file {path}: {exc}") from exc

    # generate
    def cmd_generate(self, args: argparse.Namespace) -> int:
        """Write a scenario and the derived instance"""
        out_dir = Path(args.out)
        if args.scenario:
            try:
                scenario = EcScenario.model_validate(load_json(resolve_input(args.scenario)))
            except FileNotFoundError as exc:
                raise UsageError(f"scenario file not found: {args.scenario}") from exc
            except ValidationError as exc:
                raise UsageError(f"invalid scenario file {args.scenario}: {exc}") from exc
        else:
            try:
                config = GenerationConfig(
                    n_ens=args.m,
                    n_services=args.n,
                    area_km=args.area,
                    delay_per_km=args.delay_per_km,
                )
            except ValidationError as exc:
                raise UsageError(f"invalid generator settings: {exc}") from exc
            scenario = generate(config, args.seed)

        budgets = None if args.budget is None else [args.budget] * scenario.n_services
        instance, warnings = build_instance(scenario, budgets=budgets, label=args.label or "")
        for message in warnings:
            self.emit(f"warning: {message}")
        self.emit(str(save_json(scenario.model_dump(mode="json"), out_dir / SCENARIO_FILE)))
        self.emit(str(save_json(instance.to_document(), out_dir / INSTANCE_FILE)))
        return EXIT_OK

    # solve
    def run_method(self, instance: MarketInstance, args: argparse.Namespace) -> Tuple[EquilibriumSolution, Optional[DynamicsTrace]]:
        """Dispatch to the selected solver"""
        method = args.method
        max_iters = args.max_iters
        if method == "eg":
            opts = EgOptions(
                engine=EgEngine(args.engine),
                tol=args.tol,
                max_iters=max_iters,
                normalize_budgets=args.normalize_budgets,
                seed=args.seed,
            )
            return solve_eg(instance, opts), None
        if method == "propdyn":
            opts = PropDynOptions(
                tol=args.tol,
                max_iters=max_iters,
                mbb_tol=args.certificate_tol / 10,
                seed=args.seed,
            )
            return propdyn_run(instance, opts)
        if method == "ces":
            opts = CesOptions(
                rho=args.rho,
                step=args.step,
                p0=args.p0,
                schedule=StepSchedule(args.schedule),
                max_iters=max_iters,
                **({"tol": args.ces_tol} if args.ces_tol is not None else {}),
            )
            return ces_dual_decomposition(instance, opts)
        if method == "propbr":
            return propbr_run(instance, PropBrOptions(max_rounds=args.max_rounds))
        opts = NetProfitOptions(max_iters=max_iters, certificate_tol=args.certificate_tol)
        return solve_netprofit(instance, opts), None

    def certify(self, instance: MarketInstance, solution: EquilibriumSolution, method: str, tol: float) -> Tuple[CertificateReport, bool]:
        if method == "netprofit":
            report = netprofit_certificate(instance, solution)
            return report, netprofit_residual(instance, report) <= tol
        report = kkt_certificate(instance, solution)
        if method in ("ces", "propbr"):
            return report, certificate_passes(report, tol, FEASIBILITY_FIELDS, check_gap=False)
        return report, certificate_passes(report, tol)

    def cmd_solve(self, args: argparse.Namespace) -> int:
        """Solve one instance, write solution and certificate, report the exit status"""
        instance = self.load_instance(args.instance)
        if args.normalize_budgets and args.method != "eg":
            instance = instance.normalized_budgets()
        out_dir = Path(args.out)
        converged = True
        trace = None
        try:
            solution, trace = self.run_method(instance, args)
        except ConvergenceError as exc:
            if exc.solution is None:
                raise
            solution, trace, converged = exc.solution, exc.trace, False
        except ValidationError as exc:
            raise UsageError(f"invalid solver settings: {exc}") from exc
        converged = converged and solution.converged

        if args.method == "eg" and args.normalize_budgets:
            instance = instance.normalized_budgets()
        report, passed = self.certify(instance, solution, args.method, args.certificate_tol)

        save_json(solution.to_document(), out_dir / SOLUTION_FILE)
        save_json(report.model_dump(mode="json"), out_dir / CERTIFICATE_FILE)
        if args.trace and trace is not None and len(trace) > 0:
            write_trace_csv(trace, Path(args.trace))

        self.emit(f"method: {args.method}")
        self.emit("prices: " + " ".join(PRETTY_FLOAT_FORMAT.format(p) for p in solution.prices))
        self.emit("utilities: " + " ".join(PRETTY_FLOAT_FORMAT.format(u) for u in solution.utilities))
        self.emit(f"iterations: {solution.iterations}")
        if args.pretty:
            self.emit(format_table([report.model_dump()]))

        if not converged:
            logger.warning(f"{args.method} did not converge")
            return EXIT_NOT_CONVERGED
        if not passed:
            logger.warning(f"certificate above tolerance {args.certificate_tol}: {report.model_dump()}")
            return EXIT_CERTIFICATE_FAILED
        return EXIT_OK

    # compare
    def cmd_compare(self, args: argparse.Namespace) -> int:
        """Compare the equilibrium with the baseline allocators"""
        instance = self.load_instance(args.instance)
        rows = compare_schemes(instance)
        path = write_csv(rows, Path(args.out))
        if args.pretty:
            self.emit(format_table(rows))
        self.emit(str(path))
        return EXIT_OK

    # sweep
    def sweep_rows(self, args: argparse.Namespace) -> List[Dict[str, Any]]:
        kind = args.kind
        if kind in ("budget-ratio", "budget-scale", "perturb"):
            if not args.instance:
                raise UsageError(f"sweep --kind {kind} needs --instance")
            instance = self.load_instance(args.instance)
            if kind == "budget-ratio":
                return budget_ratio_sweep(instance, args.ratios, tuple(args.pair))
            if kind == "budget-scale":
                return sweep_table(budget_sweep(instance, args.scales))
            return price_perturbation(instance, delta=args.delta, seed=args.seed)

        try:
            config = GenerationConfig(n_ens=args.m, n_services=args.n)
        except ValidationError as exc:
            raise UsageError(f"invalid generator settings: {exc}") from exc
        if kind == "size":
            return size_sweep(config, args.vary, args.values, args.seed)
        return convergence_study(
            config, args.vary, args.values, args.tolerances, datasets=args.datasets, seed=args.seed
        )

    def cmd_sweep(self, args: argparse.Namespace) -> int:
        """Run one sweep and write its CSV"""
        rows = self.sweep_rows(args)
        fieldnames = table_fieldnames(rows)
        path = write_csv(rows, Path(args.out), fieldnames)
        if args.pretty:
            self.emit(format_table(rows, fieldnames))
        self.emit(str(path))
        return EXIT_OK

    def run(self, args: argparse.Namespace) -> int:
        handler = {
            "generate": self.cmd_generate,
            "solve": self.cmd_solve,
            "compare": self.cmd_compare,
            "sweep": self.cmd_sweep,
        }[args.command]
        try:
            return handler(args)
        except UsageError as exc:
            logger.error(str(exc))
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except ConvergenceError as exc:
            logger.error(str(exc))
            return EXIT_NOT_CONVERGED
        except (EdgeMarketError, ValidationError) as exc:
            logger.error(str(exc))
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the generate, solve, compare and sweep commands"""
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Log debug messages")
    verbosity.add_argument("--quiet", action="store_true", help="Only log warnings and errors")

    parser = argparse.ArgumentParser(
        prog="edge-market",
        description="Market equilibrium allocation of edge-node capacity to services",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate_parser = commands.add_parser("generate", parents=[common], help="Generate a scenario and instance")
    generate_parser.add_argument("--m", type=int, default=8, help="Number of ENs")
    generate_parser.add_argument("--n", type=int, default=4, help="Number of services")
    generate_parser.add_argument("--seed", type=int, default=None)
    generate_parser.add_argument("--area", type=float, default=10.0, help="Side of the square area in km")
    generate_parser.add_argument("--delay-per-km", type=float, default=1.0)
    generate_parser.add_argument("--budget", type=float, default=None, help="Budget of every service")
    generate_parser.add_argument("--label", default=None)
    generate_parser.add_argument("--scenario", default=None, help="Build the instance from this scenario file")
    generate_parser.add_argument("--out", default=".", help="Output directory")

    solve_parser = commands.add_parser("solve", parents=[common], help="Solve an instance")
    solve_parser.add_argument("--instance", required=True)
    solve_parser.add_argument("--method", choices=METHODS, default="eg")
    solve_parser.add_argument("--engine", choices=[e.value for e in EgEngine], default=EgEngine.PROPORTIONAL_RESPONSE.value)
    solve_parser.add_argument("--tol", type=float, default=DEFAULT_PRICE_TOL)
    solve_parser.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    solve_parser.add_argument("--max-rounds", type=int, default=DEFAULT_MAX_ROUNDS)
    solve_parser.add_argument("--rho", type=float, default=CesOptions.model_fields["rho"].default)
    solve_parser.add_argument("--step", type=float, default=CesOptions.model_fields["step"].default)
    solve_parser.add_argument("--p0", type=float, default=CesOptions.model_fields["p0"].default)
    solve_parser.add_argument("--ces-tol", type=float, default=None, help="Absolute price change threshold of CES")
    solve_parser.add_argument("--schedule", choices=[s.value for s in StepSchedule], default=StepSchedule.CONSTANT.value)
    solve_parser.add_argument("--seed", type=int, default=None)
    solve_parser.add_argument("--normalize-budgets", action="store_true")
    solve_parser.add_argument("--certificate-tol", type=float, default=CLI_CERTIFICATE_TOL)
    solve_parser.add_argument("--trace", default=None, help="Write the dynamics trace CSV here")
    solve_parser.add_argument("--out", default=".", help="Output directory")
    solve_parser.add_argument("--pretty", action="store_true")

    compare_parser = commands.add_parser("compare", parents=[common], help="Compare allocation schemes")
    compare_parser.add_argument("--instance", required=True)
    compare_parser.add_argument("--out", default="comparison.csv")
    compare_parser.add_argument("--pretty", action="store_true")

    sweep_parser = commands.add_parser("sweep", parents=[common], help="Run a parameter sweep")
    sweep_parser.add_argument("--kind", choices=SWEEP_KINDS, required=True)
    sweep_parser.add_argument("--instance", default=None)
    sweep_parser.add_argument("--ratios", type=_float_list, default=[0.5, 1.0, 2.0])
    sweep_parser.add_argument("--pair", type=int, nargs=2, default=[0, 1])
    sweep_parser.add_argument("--scales", type=_float_list, default=[1.0, 10.0, 1e3, 1e6])
    sweep_parser.add_argument("--delta", type=float, default=0.01)
    sweep_parser.add_argument("--vary", choices=["n", "m"], default="n")
    sweep_parser.add_argument("--values", type=_int_list, default=[4, 8, 16])
    sweep_parser.add_argument("--tolerances", type=_float_list, default=[1e-2, 1e-3, 1e-4])
    sweep_parser.add_argument("--datasets", type=int, default=10)
    sweep_parser.add_argument("--m", type=int, default=8)
    sweep_parser.add_argument("--n", type=int, default=4)
    sweep_parser.add_argument("--seed", type=int, default=0)
    sweep_parser.add_argument("--out", default="sweep.csv")
    sweep_parser.add_argument("--pretty", action="store_true")
    return parser


def configure_logging(args: argparse.Namespace):
    level = LOGGING_LEVEL
    if getattr(args, "verbose", False):
        level = "DEBUG"
    elif getattr(args, "quiet", False):
        level = "WARNING"
    logging.basicConfig(format=LOGGING_FORMAT, level=level)
    logging.getLogger().setLevel(level)


def start_app(argv: Optional[Sequence[str]] = None) -> int:
    """Parse the command line, run the command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    configure_logging(args)
    return EdgeMarketApp().run(args)


if __name__ == "__main__":
    sys.exit(start_app())
