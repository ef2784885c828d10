# commands/reproduce_commands.py

import logging
import sys

import click

from commands.solve_commands import EXIT_CONFIG, default_jobs, finish
from services.errors import ConfigError
from services.experiment_service import REPRODUCTIONS, experiment_service

logger = logging.getLogger(__name__)


@click.command('reproduce', help=f"Emit one of the bundled datasets: {', '.join(REPRODUCTIONS)}.")
@click.argument('name')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='CSV output path (default: stdout).')
@click.option('--seed', type=int, default=0, show_default=True, help='Base seed for the Monte-Carlo datasets.')
@click.option('--trials', type=int, default=None,
              help='Trials for relay-baselines (default 10) and stackelberg-prices (default 100).')
@click.option('--jobs', type=int, default=default_jobs, show_default='WPN_JOBS or 1')
def reproduce(name, out, seed, trials, jobs):
    try:
        rows = experiment_service.reproduce(name, trials=trials, seed=seed, jobs=max(jobs, 1))
    except ConfigError as e:
        logger.error("reproduce: %s", e)
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    if name == 'stackelberg-prices':
        prices = experiment_service.mean_price(rows)
        if prices is not None:
            logger.info("mean prices over %d trials: c1=%.6g c2=%.6g", len(rows), prices.c1, prices.c2)
    finish(rows, out)
