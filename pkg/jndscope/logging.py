from __future__ import annotations

from rich.console import Console
from rich.markup import escape
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.theme import Theme


# Muted slate palette; report figures reuse the same hex values.
PALETTE = {
    "fg": "#d7dae0",
    "fg_muted": "#7f848e",
    "bg": "#1e222a",
    "green": "#98c379",
    "yellow": "#e5c07b",
    "orange": "#d19a66",
    "bright_orange": "#e0ac7a",
    "blue": "#61afef",
    "cyan": "#56b6c2",
    "purple": "#c678dd",
    "red": "#e06c75",
}

_theme = Theme(
    {
        "text": PALETTE["fg"],
        "muted": PALETTE["fg_muted"],
        "accent": PALETTE["orange"],
        "ok": PALETTE["green"],
        "warn": PALETTE["yellow"],
        "error": f"bold {PALETTE['red']}",
        "info": PALETTE["blue"],
        "metric": PALETTE["cyan"],
        "section": f"bold {PALETTE['bright_orange']}",
    }
)

console = Console(theme=_theme, style=PALETTE["fg"])


def diagnostic(kind: str, message: str, *, usage: bool = False) -> None:
    """Print a single-line structured diagnostic for a failed command."""
    tag = "usage-error" if usage else f"error[{kind}]"
    text = " ".join(str(message).split())
    console.print(f"[error]jndscope: {escape(tag)}:[/] {escape(text)}", soft_wrap=True)


class StepProgress:
    """Progress helper: a bar when the total is known, a spinner otherwise."""

    def __init__(self, message: str, total: int, *, enabled: bool = True):
        self.message = message
        self.total = total
        self.enabled = enabled
        self._progress: Progress | None = None
        self._task_id: int | None = None
        self._status = None

    def __enter__(self) -> "StepProgress":
        if not self.enabled:
            return self
        if self.total > 0:
            self._progress = Progress(
                SpinnerColumn(style="accent"),
                TextColumn("{task.description}", markup=True),
                BarColumn(bar_width=None),
                TextColumn("{task.completed}/{task.total}", style="muted"),
                TimeElapsedColumn(),
                console=console,
                transient=True,
            )
            self._progress.__enter__()
            self._task_id = self._progress.add_task(self.message, total=self.total)
        else:
            self._status = console.status(f"[info]{self.message}[/]")
            self._status.__enter__()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._progress:
            self._progress.__exit__(exc_type, exc, tb)
        elif self._status:
            self._status.__exit__(exc_type, exc, tb)

    def update(self, detail: str | None = None) -> None:
        description = f"{self.message} ({detail})" if detail else self.message
        if self._progress and self._task_id is not None:
            self._progress.update(self._task_id, description=description)
        elif self._status:
            self._status.update(f"[info]{description}[/]")

    def advance(self, detail: str | None = None) -> None:
        if detail:
            self.update(detail)
        if self._progress and self._task_id is not None:
            self._progress.advance(self._task_id)

    def callback(self):
        """Adapt to the ``(phase, index, total, payload)`` callbacks used by library code."""

        def _on_event(phase: str, index: int, total: int, payload: object) -> None:
            if phase == "end":
                self.advance(str(payload) if payload is not None else None)

        return _on_event


def step_progress(message: str, total: int, *, enabled: bool = True) -> StepProgress:
    """Return a StepProgress helper for consistent CLI progress indicators."""
    return StepProgress(message, total, enabled=enabled)
