"""Reneging equilibrium toolkit - command-line entry point."""

import argparse
import logging
import sys

from pydantic import ValidationError

from app.commands.simulate import cmd_simulate
from app.commands.solve import cmd_solve
from app.commands.sweep import cmd_sweep
from app.commands.verify import cmd_verify
from app.core import config
from app.core.errors import ConfigError, RenegeError
from app.models.run_config import RunConfig
from app.models.state import Likelihood

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as ConfigError instead of exiting."""

    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="renege", description="Equilibrium reneging thresholds for an observable M/G/1 queue")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", help="output directory (default: config output.directory)")
    common.add_argument("--seed", type=int)
    common.add_argument("--horizon", type=int, help="simulation events")
    common.add_argument("--tol", type=float, help="root tolerance for every threshold")
    common.add_argument("--grid", type=int, help="grid points per axis")
    common.add_argument("--likelihood", choices=[m.value for m in Likelihood])
    common.add_argument("--n-max", type=int, help="solve this occupancy instead of searching for it")
    common.add_argument("--verbose", action="store_true")

    solve = sub.add_parser("solve", parents=[common], help="solve the equilibrium profile")
    solve.add_argument("--curves", action="store_true", help="also write utility and posterior CSVs")

    simulate = sub.add_parser("simulate", parents=[common], help="simulate a profile")
    simulate.add_argument("--profile", help="profile.json from a previous solve")

    verify = sub.add_parser("verify", parents=[common], help="solve, simulate and compare")
    verify.add_argument("--replications", type=int)

    sweep = sub.add_parser("sweep", parents=[common], help="solve along one parameter")
    sweep.add_argument("--parameter", required=True, help="lambda, V, C or model.<field>")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    return parser


def apply_overrides(run: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags win over the config file."""
    solve = run.solve.model_copy()
    if args.tol is not None:
        if args.tol <= 0:
            raise ConfigError(f"--tol must be positive, got {args.tol}")
        solve.eps_root = args.tol
    if args.grid is not None:
        if args.grid < 20:
            raise ConfigError(f"--grid must be at least 20, got {args.grid}")
        solve.grid_points = args.grid
    if args.likelihood is not None:
        solve.likelihood = Likelihood(args.likelihood)
    if args.n_max is not None:
        if args.n_max < 1:
            raise ConfigError(f"--n-max must be at least 1, got {args.n_max}")
        solve.n_max = args.n_max
    return run.model_copy(update={"solve": solve})


def dispatch(args: argparse.Namespace) -> int:
    run = apply_overrides(RunConfig.load(args.config), args)
    match args.command:
        case "solve":
            return cmd_solve(run, out=args.out, curves=args.curves or None)
        case "simulate":
            return cmd_simulate(run, out=args.out, seed=args.seed, horizon=args.horizon, profile_path=args.profile)
        case "verify":
            return cmd_verify(run, out=args.out, seed=args.seed, horizon=args.horizon, replications=args.replications)
        case "sweep":
            return cmd_sweep(run, args.parameter, args.values, out=args.out)
    raise ConfigError(f"unknown command: {args.command}")


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else config.LOG_LEVEL,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return dispatch(args)
    except RenegeError as e:
        logger.debug(f"{type(e).__name__}: {e.detail}")
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
