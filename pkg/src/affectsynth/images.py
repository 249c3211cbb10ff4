"""RGB image and mask buffers plus 8-bit PNG IO.

Pixel values live in [0, 1] as float64; they are clamped on construction,
and mapped linearly to 8-bit on save (no color management).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


@dataclass(frozen=True)
class Image:
    """Row-major RGB raster, data shape (height, width, 3) in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"image data must be (h, w, 3), got {d.shape}")
        d = np.clip(d, 0.0, 1.0)
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def blank(cls, width: int, height: int, color=(0.0, 0.0, 0.0)) -> "Image":
        data = np.empty((height, width, 3))
        data[:] = np.asarray(color, dtype=np.float64)
        return cls(data)


@dataclass(frozen=True)
class Mask:
    """Boolean inside/outside bitmap paired with an equally sized image."""

    bitmap: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.bitmap, dtype=bool))
        if b.ndim != 2:
            raise ValueError(f"mask bitmap must be 2-D, got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bitmap", b)

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    def matches(self, image: Image) -> bool:
        return self.bitmap.shape == image.data.shape[:2]


def load_png(path: str | Path) -> Image:
    with PILImage.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return Image(arr)


def save_png(image: Image, path: str | Path) -> None:
    as_bytes = np.round(image.data * 255.0).clip(0, 255).astype(np.uint8)
    PILImage.fromarray(as_bytes, mode="RGB").save(Path(path), format="PNG")


def png_bytes(image: Image) -> bytes:
    """Encoded PNG as an in-memory byte string (same bytes save_png writes)."""
    import io

    as_bytes = np.round(image.data * 255.0).clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(as_bytes, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
