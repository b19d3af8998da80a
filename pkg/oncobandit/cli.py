"""Command line entry point: ``run``, ``grid`` and ``synth``."""

from __future__ import annotations

import argparse
import asyncio
from dataclasses import replace
import logging
from pathlib import Path
import sys

from .agents import AgentFamily, AgentSpec
from .const import (
    DEFAULT_PLANTED_BONUS,
    DEFAULT_SYNTH_NOISE,
    DEFAULT_WINDOW,
    REWARD_DIFF,
    REWARD_PERCENTILE,
    REWARD_RANK,
    STATE_GENOMIC,
    STATE_MODES,
    VERSION,
)
from .core import RewardKind, StateMode
from .errors import ConfigError, OncoBanditError
from .ingest import pca_reduce
from .reports import async_emit_reports
from .runner import CohortSource, GridSpec, async_run_grid, parse_grid
from .synthetic import async_export_synthetic, planted_rules, synthesize_dataset

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CELL_FAILURES = 1
EXIT_BAD_INPUT = 2


def _override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for every subcommand."""
    parser = argparse.ArgumentParser(
        prog="oncobandit", description="Contextual-bandit treatment assignment benchmark"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--debug", action="store_true", help="log at debug level")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one agent on one cohort")
    run.add_argument("--responses", type=Path, required=True)
    run.add_argument("--features", type=Path, required=True)
    run.add_argument("--biomarkers", type=Path, required=True)
    run.add_argument("--rules", type=Path)
    run.add_argument("--state", choices=STATE_MODES, default=STATE_GENOMIC)
    run.add_argument(
        "--reward", choices=[REWARD_DIFF, REWARD_RANK, REWARD_PERCENTILE], default=REWARD_DIFF
    )
    run.add_argument("--agent", choices=[f.value for f in AgentFamily], required=True)
    run.add_argument("--param", type=_override, action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--horizon", type=int)
    run.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    run.add_argument("--reduce", type=int, metavar="DIM")
    run.add_argument("--out", type=Path, required=True)

    grid = commands.add_parser("grid", help="run a grid described by a key=value file")
    grid.add_argument("--config", type=Path, required=True)
    grid.add_argument("--jobs", type=int, default=1)
    grid.add_argument("--out", type=Path, help="overrides 'out' in the grid file")

    synth = commands.add_parser("synth", help="write a planted-signal synthetic cohort")
    synth.add_argument("--n", type=int, default=1000)
    synth.add_argument("--k", type=int, default=7)
    synth.add_argument("--dim", type=int, default=20)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--noise", type=float, default=DEFAULT_SYNTH_NOISE)
    synth.add_argument("--bonus", type=float, default=DEFAULT_PLANTED_BONUS)
    synth.add_argument("--no-rules", action="store_true", help="plant no biomarker rules")
    synth.add_argument("--reduce", type=int, metavar="DIM")
    synth.add_argument("--out", type=Path, required=True)
    return parser


async def _async_grid(grid: GridSpec, jobs: int, out: Path) -> int:
    outcome = await async_run_grid(grid, jobs)
    await async_emit_reports(
        outcome.results,
        out,
        failures=outcome.failures,
        window=grid.window,
        config=grid.as_dict(),
    )
    for failure in outcome.failures:
        sys.stderr.write(f"cell {failure.key} failed: {failure.message}\n")
    return EXIT_CELL_FAILURES if outcome.failures else EXIT_OK


def _run_command(args: argparse.Namespace) -> int:
    cohort = CohortSource(
        responses=args.responses,
        features=args.features,
        biomarkers=args.biomarkers,
        rules=args.rules,
        reduce=args.reduce,
    )
    if args.horizon is not None and args.horizon < 1:
        raise ConfigError(f"horizon must be at least 1, got {args.horizon}")
    grid = GridSpec(
        cohort=cohort,
        states=(StateMode(args.state),),
        rewards=(RewardKind(args.reward),),
        agents=(AgentSpec.from_config(args.agent, dict(args.param)),),
        seeds=(args.seed,),
        horizon=args.horizon,
        window=args.window,
        out=args.out,
    )
    grid.cells()
    return asyncio.run(_async_grid(grid, 1, args.out))


def _grid_command(args: argparse.Namespace) -> int:
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read grid file {args.config}: {err}") from err
    grid = parse_grid(text, args.config.parent)
    out = args.out or grid.out
    if out is None:
        raise ConfigError("no output directory: set 'out' in the grid file or pass --out")
    grid.cells()
    return asyncio.run(_async_grid(grid, args.jobs, out))


def _synth_command(args: argparse.Namespace) -> int:
    rules = None if args.no_rules else planted_rules(args.k)
    dataset, truth = synthesize_dataset(
        args.n, args.k, args.dim, rules, args.seed, noise=args.noise, bonus=args.bonus
    )
    if args.reduce is not None:
        try:
            reduced = pca_reduce(dataset.features, args.reduce)
        except ValueError as err:
            raise ConfigError(str(err)) from err
        dataset = replace(dataset, features=reduced)
    written = asyncio.run(async_export_synthetic(dataset, truth, args.out, rules))
    _LOGGER.info("Wrote %s", ", ".join(str(path) for path in written))
    return EXIT_OK


COMMANDS = {"run": _run_command, "grid": _grid_command, "synth": _synth_command}


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, run the command and return the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except OncoBanditError as err:
        _LOGGER.error("%s", err)
        sys.stderr.write(f"error: {err}\n")
        return EXIT_BAD_INPUT
