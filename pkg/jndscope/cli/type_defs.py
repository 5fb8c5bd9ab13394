"""Type aliases shared by the CLI command modules."""

from __future__ import annotations

from typing import Dict

from typer.models import CommandFunctionType

# Maps command names to their handler functions for registration
CommandMap = Dict[str, CommandFunctionType]
