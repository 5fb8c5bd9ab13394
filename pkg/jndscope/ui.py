"""UI utilities for consistently themed Rich console output."""

from __future__ import annotations

from typing import Iterable, Sequence, Tuple

from rich.table import Table

from jndscope.logging import PALETTE, console

DEFAULT_ROW_STYLES: Tuple[str, str] | None = None


def themed_table(
    *,
    title: str | None = None,
    show_header: bool = True,
    header_style: str | None = None,
    row_styles: Tuple[str, str] | None = DEFAULT_ROW_STYLES,
    box_style=None,
    pad_edge: bool = False,
    expand: bool = False,
) -> Table:
    """Return a Rich Table with shared palette + layout defaults."""
    return Table(
        title=title,
        show_header=show_header,
        header_style=header_style or f"bold {PALETTE['blue']}",
        style=PALETTE["fg"],
        row_styles=row_styles,
        box=box_style,
        pad_edge=pad_edge,
        expand=expand,
    )


def print_table(
    columns: Sequence[str], rows: Iterable[Sequence[object]], *, title: str | None = None
) -> None:
    table = themed_table(title=f"[accent]{title}[/accent]" if title else None)
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*(str(cell) for cell in row))
    console.print(table)


def success(message: str) -> None:
    console.print(f"[ok]{message}[/]")


def info(message: str) -> None:
    console.print(f"[info]{message}[/]")


def warn(message: str) -> None:
    console.print(f"[warn]{message}[/]")
