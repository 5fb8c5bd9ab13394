"""Full-reference JND prediction on compression ladders."""

from __future__ import annotations

from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Dict

try:  # Python 3.11+
    import tomllib  # type: ignore[attr-defined]
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib  # type: ignore

DEFAULT_DESCRIPTION = "Full-reference just-noticeable-distortion prediction on compression ladders."


def _read_metadata() -> Dict[str, Any]:
    """Installed distribution metadata, else the ``[project]`` table of a source checkout."""
    try:
        dist = importlib_metadata.metadata("jndscope")
        return {"version": dist.get("Version"), "description": dist.get("Summary")}
    except importlib_metadata.PackageNotFoundError:  # pragma: no cover - dev checkout
        pyproject = Path(__file__).resolve().parent.parent / "pyproject.toml"
        if not pyproject.exists():
            return {}
        with pyproject.open("rb") as fh:
            return dict(tomllib.load(fh).get("project", {}))


_META = _read_metadata()
__version__: str = _META.get("version") or "0.0.0"
__description__: str = _META.get("description") or DEFAULT_DESCRIPTION

__all__ = ["__version__", "__description__"]
