"""Command line interface for the cluster QMC engine."""

import argparse
import logging
import sys
from pathlib import Path

from src.config import LOG_LEVEL, NUM_WORKERS, OUTPUT_DIR
from src.dimsym import run_identity_suite
from src.errors import ConfigValidationError, NumericalError
from src.harness import (
    ExperimentRunner,
    ResultRow,
    ResultTable,
    emit_table,
    load_experiment_config,
    parabola_fit,
    read_table_csv,
    run_experiment,
)
from src.reference_data import ground_state_table

logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def parse_args(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(description="Quantum Monte Carlo for Lennard-Jones clusters in D dimensions")
    parser.add_argument("--config", type=str, help="Experiment config file (key = value)")
    parser.add_argument("--seed", type=int, default=None, help="Master seed overriding the config")
    parser.add_argument("--out", type=str, default=None, help=f"Output directory (default: config or {OUTPUT_DIR})")
    parser.add_argument("--parallel-dims", type=int, default=NUM_WORKERS, help="Dimensions run in parallel")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("optimize", "Optimize trial functions and write wavefunction artifacts"),
        ("vmc", "Production VMC from wavefunction artifacts"),
        ("cfmc", "Correlation-function projection from VMC artifacts"),
        ("scan-dims", "Run all stages for every dimension and emit the result table"),
    ):
        command = commands.add_parser(name, help=text)
        command.add_argument("--dims", type=str, default=None, help="Comma-separated dimensions overriding the config")

    verify = commands.add_parser("verify-identities", help="Randomized check of the exact identities")
    verify.add_argument("--n-configs", type=int, default=1000, help="Configurations per atom count")
    verify.add_argument("--atoms", type=str, default="3,4,5", help="Comma-separated atom counts")

    fit = commands.add_parser("fit", help="Parabola fit of a result table or a published table")
    fit.add_argument("--table", type=str, help="Result CSV written by scan-dims")
    fit.add_argument("--published", type=str, help="Published table: Kr3, Ar3, half-Ne3 or Ar4")
    fit.add_argument("--d-min", type=int, default=None, help="Smallest fitted dimension")
    fit.add_argument("--center", type=float, default=None, help="Center of the parabola (default N)")
    return parser.parse_args(argv)


def _config(args):
    if not args.config:
        raise ConfigValidationError(f"'{args.command}' needs --config")
    overrides = {"seed": args.seed, "output": args.out, "dims": getattr(args, "dims", None)}
    return load_experiment_config(args.config, overrides)


def _stage_rows(config, runner, stage: str) -> ResultTable:
    rows = []
    for dim in config.dims:
        if stage == "optimize":
            record = runner.optimize(dim)
            values = zip(record.energies, [float("nan")] * len(record.energies))
            method = "VMC"
        elif stage == "vmc":
            record = runner.vmc(dim)
            values = zip(record.energies, record.errors)
            method = "VMC"
        else:
            levels = runner.cfmc(dim)
            values = [(level.energy, level.error) for level in levels]
            method = "CFMC"
        for k, (energy, error) in enumerate(values, start=1):
            rows.append(ResultRow(species=config.species, n_atoms=config.n_atoms, dim=dim, level=k, energy=energy, error=error, method=method))
    return ResultTable(species=config.species, n_atoms=config.n_atoms, seed=config.seed, rows=rows)


def run_command(args) -> int:
    if args.command == "verify-identities":
        atoms = tuple(int(n) for n in args.atoms.split(","))
        report = run_identity_suite(args.n_configs, atoms, seed=args.seed or 0)
        for check in report.checks:
            print(f"N={check.n_atoms} {check.name:<20} worst {check.worst_residual:.3e}  {'ok' if check.passed else 'FAIL'}")
        return EXIT_OK if report.passed else EXIT_NUMERICAL

    if args.command == "fit":
        if bool(args.table) == bool(args.published):
            raise ConfigValidationError("fit needs exactly one of --table or --published")
        if args.published:
            published = ground_state_table(args.published)
            energies, n_atoms = published.as_floats(), published.n_atoms
            d_min = args.d_min if args.d_min is not None else published.fit_d_min
        else:
            table = read_table_csv(args.table)
            energies, n_atoms = table.energies(1), table.n_atoms
            d_min = args.d_min if args.d_min is not None else max(1, n_atoms - 1)
        center = args.center if args.center is not None else float(n_atoms)
        fit = parabola_fit(energies, d_min, center)
        print(f"E(D) = {fit.offset!r} + {fit.curvature!r} (D - {center})^2")
        for dim, deviation in fit.deviations.items():
            marker = "" if dim in fit.fitted_dims else "  (not fitted)"
            print(f"D={dim}: E={energies[dim]!r}  dE={deviation:.3e}{marker}")
        return EXIT_OK

    config = _config(args)
    out = Path(args.out or config.output)
    if args.command == "scan-dims":
        table = run_experiment(config, parallel_dims=args.parallel_dims, out_dir=out)
        emit_table(table, out)
        return EXIT_NUMERICAL if table.failures else EXIT_OK

    runner = ExperimentRunner(config, out)
    table = _stage_rows(config, runner, args.command)
    emit_table(table, out, formats=("csv",), stem=f"{config.label}_{args.command}")
    for row in table.rows:
        print(f"D={row.dim} k={row.level} {row.method}: {row.energy!r} +- {row.error:.2e}")
    return EXIT_OK


def main(argv=None) -> int:
    """Run the CLI and map errors to exit codes."""
    args = parse_args(argv)
    try:
        return run_command(args)
    except ConfigValidationError as e:
        logger.error(f"Invalid input: {str(e)}")
        print(f"Error: {str(e)}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as e:
        logger.error(f"Numerical failure: {str(e)}")
        print(f"Error: {str(e)}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
