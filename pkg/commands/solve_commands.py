# commands/solve_commands.py

import logging
import os
import sys
from typing import Optional, Sequence

import click

from models.run_config import ResultRow
from services.errors import ConfigError, SolverError
from services.experiment_service import experiment_service

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_ALL_FAILED = 3


def default_jobs() -> int:
    return int(os.environ.get('WPN_JOBS', '1'))


def emit_rows(rows: Sequence[ResultRow], out: Optional[str]) -> None:
    """Write the rows as CSV to `out`, or to stdout when no path is given."""
    if out:
        with open(out, 'w', encoding='utf-8', newline='') as handle:
            experiment_service.write_csv(rows, handle)
        logger.info("wrote %d rows to %s", len(rows), out)
    else:
        click.echo(experiment_service.to_csv(rows), nl=False)


def finish(rows: Sequence[ResultRow], out: Optional[str]) -> None:
    emit_rows(rows, out)
    if experiment_service.all_failed(rows):
        click.echo("error: every solve failed", err=True)
        sys.exit(EXIT_ALL_FAILED)


def _run(command: str, config_path: str, seed: Optional[int], out: Optional[str], jobs: int,
         tolerance: Optional[float]) -> None:
    try:
        config = experiment_service.load_config(config_path)
        if seed is not None:
            config.montecarlo.seed = seed
        if tolerance is not None:
            if not tolerance > 0:
                raise ConfigError("tolerance must be positive", key_path='solver.tolerance')
            config.solver.tolerance = tolerance
        if jobs < 1:
            raise ConfigError("jobs must be at least 1", key_path='jobs')
        rows = experiment_service.run(config, command, jobs)
    except ConfigError as e:
        logger.error("%s: %s", command, e)
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except SolverError as e:
        logger.error("%s: %s", command, e)
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_ALL_FAILED)
    finish(rows, out or config.output)


def _common(func):
    func = click.option('--tolerance', type=float, default=None, help='Override solver.tolerance.')(func)
    func = click.option('--jobs', type=int, default=default_jobs, show_default='WPN_JOBS or 1',
                        help='Worker threads for sweep points and trials.')(func)
    func = click.option('--out', type=click.Path(dir_okay=False), default=None,
                        help='CSV output path (default: the config\'s output, else stdout).')(func)
    func = click.option('--seed', type=int, default=None, help='Override montecarlo.seed.')(func)
    return click.argument('config', type=click.Path(dir_okay=False))(func)


@click.command('solve')
@_common
def solve(config, seed, out, jobs, tolerance):
    """Run one solve described by CONFIG."""
    _run('solve', config, seed, out, jobs, tolerance)


@click.command('sweep')
@_common
def sweep(config, seed, out, jobs, tolerance):
    """Solve once per value of the config's sweep parameter."""
    _run('sweep', config, seed, out, jobs, tolerance)


@click.command('montecarlo')
@_common
def montecarlo(config, seed, out, jobs, tolerance):
    """Solve once per trial; trial k uses seed base + k."""
    _run('montecarlo', config, seed, out, jobs, tolerance)
