"""
commands/__init__.py

This module initializes the commands package and provides a function to
register every command with the `pseudoheal` group.

Commands:
    phantom, prepare: Dataset creation.
    train, eval, sweep-semi, ablate: Training and evaluation runs.
    panels, scores: Human evaluation tooling.
    report: Joined summary of evaluated runs.

Functions:
    register_commands(cli): Registers all commands with the given group.

Usage:
    from pseudoheal.commands import register_commands
    register_commands(cli)
"""

from .data import phantom, prepare
from .experiments import ablate, evaluate, sweep_semi, train
from .report import report
from .study import panels, scores


def register_commands(cli):
    """
    Register all commands with the command group.

    Args:
        cli (click.Group): The `pseudoheal` group.
    """
    for command in (phantom, prepare, train, evaluate, sweep_semi, ablate, panels, scores, report):
        cli.add_command(command)
