"""Run-directory manifest: package versions, seeds and input hashes."""

from __future__ import annotations

import json
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

from jndscope import __version__
from jndscope.core import sha256_file

MANIFEST_FILE = "manifest.json"
TRACKED_PACKAGES = (
    "numpy",
    "scipy",
    "pillow",
    "torch",
    "torchvision",
    "safetensors",
    "pydantic",
    "matplotlib",
)

PathLike = Union[str, Path]


def package_versions() -> Dict[str, Optional[str]]:
    versions: Dict[str, Optional[str]] = {"jndscope": __version__}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def hash_inputs(paths: Iterable[PathLike], base: Optional[Path] = None) -> Dict[str, str]:
    """SHA-256 of each input file; directories contribute every file beneath them."""
    hashes: Dict[str, str] = {}
    for path in paths:
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for file in files:
            key = file.relative_to(base).as_posix() if base and file.is_relative_to(base) else file.as_posix()
            hashes[key] = sha256_file(file)
    return dict(sorted(hashes.items()))


def write_manifest(
    run_dir: PathLike,
    command: str,
    *,
    config: Mapping[str, Any],
    seeds: Mapping[str, int],
    inputs: Iterable[PathLike] = (),
) -> Path:
    """Merge this command's entry into ``<run_dir>/manifest.json``.

    The file carries no timestamps so identical reruns rewrite identical bytes.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / MANIFEST_FILE
    manifest: Dict[str, Any] = {}
    if path.is_file():
        manifest = json.loads(path.read_text(encoding="utf-8"))
    manifest["versions"] = package_versions()
    commands = manifest.setdefault("commands", {})
    commands[command] = {
        "config": dict(config),
        "seeds": dict(seeds),
        "inputs": hash_inputs(inputs, base=run_dir),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
