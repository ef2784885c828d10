import sys
import os

# Add the project's root directory to the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

# main.py
"""
Command-line entry point.

`create_cli()` builds the click group and registers the command modules
under commands/. Logging goes to stderr so CSV written to stdout stays
clean; the level comes from --log-level or WPN_LOG_LEVEL.
"""

import logging

import click

from commands.reproduce_commands import reproduce
from commands.solve_commands import montecarlo, solve, sweep

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


def create_cli() -> click.Group:
    """Create and configure the command group."""

    @click.group()
    @click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False),
                  default=lambda: os.environ.get('WPN_LOG_LEVEL', 'WARNING').upper(),
                  show_default='WPN_LOG_LEVEL or WARNING')
    def cli(log_level):
        """Resource allocation for wireless-powered networks."""
        logging.basicConfig(level=getattr(logging, log_level.upper()), stream=sys.stderr,
                            format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)

    # --- Register commands ---
    cli.add_command(solve)
    cli.add_command(sweep)
    cli.add_command(montecarlo)
    cli.add_command(reproduce)
    return cli


if __name__ == "__main__":
    create_cli()()
