"""Aligned, non-overlapping random patch extraction from reference/distorted pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from jndscope.core import ImageBuffer
from jndscope.errors import JndscopeError, ShapeMismatch

MAX_CONSECUTIVE_REJECTIONS = 1000

Origin = Tuple[int, int]


class InfeasiblePatching(JndscopeError, ValueError):
    """``n`` disjoint ``s x s`` patches cannot be placed in the image."""


@dataclass(frozen=True)
class PatchPair:
    ref_patch: ImageBuffer
    dist_patch: ImageBuffer
    origin: Origin
    index: int

    @property
    def size(self) -> int:
        return self.ref_patch.width

    def rectangle(self) -> Tuple[int, int, int, int]:
        x, y = self.origin
        return (x, y, x + self.size, y + self.size)


def grid_capacity(width: int, height: int, s: int) -> int:
    return (width // s) * (height // s)


def _check_feasible(width: int, height: int, n: int, s: int) -> None:
    if n < 1 or s < 1:
        raise ValueError("patch count and size must be positive")
    if s > width or s > height:
        raise InfeasiblePatching(f"{s}x{s} patch does not fit a {width}x{height} image")
    if n * s * s > width * height:
        raise InfeasiblePatching(
            f"{n} patches of {s}x{s} exceed the {width}x{height} image area"
        )
    if grid_capacity(width, height, s) < n:
        raise InfeasiblePatching(
            f"at most {grid_capacity(width, height, s)} disjoint {s}x{s} patches fit "
            f"a {width}x{height} image, {n} requested"
        )


def _overlaps(a: Origin, b: Origin, s: int) -> bool:
    return abs(a[0] - b[0]) < s and abs(a[1] - b[1]) < s


def _grid_origins(
    width: int, height: int, n: int, s: int, rng: np.random.Generator
) -> List[Origin]:
    cols, rows = width // s, height // s
    off_x = int(rng.integers(0, width - cols * s + 1))
    off_y = int(rng.integers(0, height - rows * s + 1))
    cells = rng.choice(cols * rows, size=n, replace=False)
    return [(off_x + int(c % cols) * s, off_y + int(c // cols) * s) for c in cells]


def sample_origins(width: int, height: int, n: int, s: int, seed: int) -> List[Origin]:
    """Draw ``n`` pairwise-disjoint patch origins by rejection sampling.

    After 1000 consecutive rejections the draw restarts on a randomly offset
    grid and picks ``n`` distinct cells.
    """
    _check_feasible(width, height, n, s)
    rng = np.random.default_rng(seed)
    placed: List[Origin] = []
    rejections = 0
    while len(placed) < n:
        candidate = (
            int(rng.integers(0, width - s + 1)),
            int(rng.integers(0, height - s + 1)),
        )
        if any(_overlaps(candidate, other, s) for other in placed):
            rejections += 1
            if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                return _grid_origins(width, height, n, s, rng)
            continue
        placed.append(candidate)
        rejections = 0
    return placed


def crop_pairs(
    ref: ImageBuffer, dist: ImageBuffer, origins: Sequence[Origin], s: int
) -> List[PatchPair]:
    if ref.shape != dist.shape:
        raise ShapeMismatch(f"reference {ref.shape} and distorted {dist.shape} differ")
    return [
        PatchPair(
            ref_patch=ref.crop(x, y, s),
            dist_patch=dist.crop(x, y, s),
            origin=(x, y),
            index=i,
        )
        for i, (x, y) in enumerate(origins, start=1)
    ]


def extract_patches(
    ref: ImageBuffer, dist: ImageBuffer, n: int, s: int, rng_seed: int
) -> List[PatchPair]:
    if ref.shape != dist.shape:
        raise ShapeMismatch(f"reference {ref.shape} and distorted {dist.shape} differ")
    origins = sample_origins(ref.width, ref.height, n, s, rng_seed)
    return crop_pairs(ref, dist, origins, s)


def dump_rectangles(
    origins: Sequence[Origin], s: int, path: Union[str, Path], *, image_id: str = ""
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "image_id": image_id,
        "size": s,
        "patches": [
            {"index": i, "x": x, "y": y, "width": s, "height": s}
            for i, (x, y) in enumerate(origins, start=1)
        ],
    }
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path
