"""Helpers for resolving project, configuration and run-directory paths."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Optional, Union

REPO_SENTINELS: Iterable[str] = (".git", "pyproject.toml", "uv.lock")


def detect_repo_root(start: Optional[Path] = None) -> Optional[Path]:
    """Walk upward from ``start`` (default: cwd) to find the repo root."""
    current = (start or Path.cwd()).resolve()
    for candidate in [current, *current.parents]:
        if any((candidate / marker).exists() for marker in REPO_SENTINELS):
            return candidate
    return None


def ensure_dir(path: Union[str, os.PathLike[str]]) -> Path:
    resolved = Path(path).expanduser()
    resolved.mkdir(parents=True, exist_ok=True)
    return resolved


def run_dir(root: Union[str, os.PathLike[str]], name: str) -> Path:
    """Return ``<root>/<name>``, refusing names that escape the runs root."""
    if not name.strip():
        raise ValueError("run name cannot be empty")
    base = Path(root).expanduser().resolve()
    resolved = (base / name).resolve()
    try:
        resolved.relative_to(base)
    except ValueError as exc:
        raise ValueError("run name must stay within the runs root") from exc
    return resolved
