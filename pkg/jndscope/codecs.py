"""Codec adapters that encode an image at a quality level and decode it back."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def to_pil(pixels: np.ndarray) -> Image.Image:
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        return Image.fromarray(pixels[:, :, 0], mode="L")
    return Image.fromarray(pixels, mode="RGB")


def from_pil(image: Image.Image, channels: int) -> np.ndarray:
    mode = "L" if channels == 1 else "RGB"
    array = np.asarray(image.convert(mode), dtype=np.uint8)
    if array.ndim == 2:
        array = array[:, :, None]
    return array


def jpeg_roundtrip(pixels: np.ndarray, level: int) -> np.ndarray:
    """Encode with baseline JPEG at ``quality=level`` and decode again.

    Chroma is kept at 4:4:4 so small patches are not dominated by subsampling
    and the encoder is run without the optimisation pass, which keeps the
    output byte-stable across runs.
    """
    if not 1 <= level <= 100:
        raise ValueError(f"JPEG quality must be within [1, 100], got {level}")
    channels = pixels.shape[2]
    buffer = io.BytesIO()
    to_pil(pixels).save(
        buffer, format="JPEG", quality=int(level), subsampling=0, optimize=False
    )
    buffer.seek(0)
    with Image.open(buffer) as decoded:
        return from_pil(decoded, channels)


def png_bytes(pixels: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    to_pil(pixels).save(buffer, format="PNG")
    return buffer.getvalue()
