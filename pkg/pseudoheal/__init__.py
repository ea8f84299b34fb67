"""
__init__.py

This module sets up the pseudoheal package: environment, logging and the
command line interface.

It includes the following:
- Loading of a `.env` file before the configuration is read.
- Logging configuration to output logs to stdout.
- Command line factory (`create_cli`) that registers every command.
- Error handling that maps package errors to process exit codes.

Classes:
- PseudohealGroup: Click group that turns errors into exit codes.

Functions:
- create_cli: Creates the `pseudoheal` command group.
"""

import logging
import sys
import traceback

import click

from dotenv import load_dotenv

load_dotenv()

from config import Config  # noqa: E402
from .errors import PseudohealError  # noqa: E402

logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)
logger = logging.getLogger(__name__)


class PseudohealGroup(click.Group):
    """ Command group that reports package errors with their exit codes. """

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.exceptions.Abort, click.ClickException):
            raise
        except PseudohealError as e:
            logger.error("%s: %s", e.code, e.description)
            ctx.exit(e.exit_code)
        except Exception as e:
            logger.error("An unhandled exception occurred: %s", str(e))
            logger.error(traceback.format_exc())
            ctx.exit(1)


def create_cli():
    """ Create the `pseudoheal` command group with every command registered. """
    from .commands import register_commands

    @click.group(cls=PseudohealGroup)
    def cli():
        """Pseudo-healthy synthesis: phantoms, training, evaluation and rater studies."""

    register_commands(cli)
    return cli
