from __future__ import annotations

import typer

from . import config, evaluate, predict, prepare, report, selftest, train
from ..type_defs import CommandMap

COMMAND_MODULES = [
    prepare,
    train,
    predict,
    evaluate,
    report,
    selftest,
    config,
]


def register(app: typer.Typer) -> CommandMap:
    """Attach every subcommand to the shared Typer app."""
    command_map: CommandMap = {}
    for module in COMMAND_MODULES:
        command_map.update(module.register(app))
    return command_map
