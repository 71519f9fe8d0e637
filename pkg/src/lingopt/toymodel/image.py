from __future__ import annotations

import base64
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import PreconditionError, ShapeError
from . import container

PATCH = 4
GRID_MAGIC = b"LINGOPT-GRID-v1\x00"


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Single-channel image with pixels in [0, 1], stored row-major."""

    height: int
    width: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64).reshape(-1)
        if px.size != self.height * self.width:
            raise ShapeError(
                f"{px.size} pixels for a {self.height}x{self.width} grid"
            )
        if not np.all(np.isfinite(px)) or px.min(initial=0.0) < 0.0 or px.max(initial=0.0) > 1.0:
            raise PreconditionError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr) -> "ImageGrid":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"image array must be 2-D, got {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], arr)

    def as_array(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ImageGrid)
            and self.height == other.height
            and self.width == other.width
            and np.array_equal(self.pixels, other.pixels)
        )

    def patches(self, size: int = PATCH) -> np.ndarray:
        """Flatten non-overlapping ``size`` x ``size`` patches, raster order."""
        if self.height % size or self.width % size:
            raise ShapeError(
                f"{self.height}x{self.width} grid is not divisible into {size}x{size} patches"
            )
        a = self.as_array()
        ph, pw = self.height // size, self.width // size
        return (
            a.reshape(ph, size, pw, size).transpose(0, 2, 1, 3).reshape(ph * pw, size * size).copy()
        )

    def to_bytes(self) -> bytes:
        meta = {"kind": "grid", "height": str(self.height), "width": str(self.width)}
        return container.pack(GRID_MAGIC, meta, [self.as_array()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "ImageGrid":
        meta, payload = container.unpack(data, GRID_MAGIC)
        h, w = int(meta["height"]), int(meta["width"])
        (arr,) = container.read_arrays(payload, [(h, w)])
        return cls(h, w, arr)

    def to_base64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_base64(cls, text: str) -> "ImageGrid":
        return cls.from_bytes(base64.b64decode(text, validate=True))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ImageGrid":
        return cls.from_bytes(Path(path).read_bytes())
