"""2D vector-field container and the portable file formats used across the package.

Raw grids are little-endian float32 with a 16-byte header (magic, width,
height, channels); images are binary 8-bit PGM or PNG.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

RAW_GRID_MAGIC = b"FGRD"


@dataclass
class FlowField:
    """Vector field on a regular w x h grid.

    ``vectors`` has shape (h, w, 2) with components (u, v); ``valid`` marks
    cells whose values are meaningful (False inside solid bodies or where an
    estimator rejected the local solution). ``units`` is a tag such as
    ``"m/s"`` or ``"px/frame"``.
    """

    vectors: np.ndarray
    units: str
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise ValueError(f"vectors must have shape (h, w, 2), got {self.vectors.shape}")
        if self.valid is None:
            self.valid = np.ones(self.vectors.shape[:2], dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.vectors.shape[:2]:
            raise ValueError("valid mask shape does not match vectors")
        if not np.all(np.isfinite(self.vectors[self.valid])):
            raise ValueError("non-finite values in valid cells")

    @property
    def shape(self) -> tuple[int, int]:
        """(h, w) of the grid."""
        return self.vectors.shape[:2]

    @property
    def u(self) -> np.ndarray:
        return self.vectors[:, :, 0]

    @property
    def v(self) -> np.ndarray:
        return self.vectors[:, :, 1]

    def scaled(self, factor: float, units: str) -> "FlowField":
        return FlowField(self.vectors * factor, units, self.valid.copy())


def write_raw_grid(path, data: np.ndarray) -> None:
    """Write a (h, w) or (h, w, c) array as a raw little-endian f32 grid."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("expected a 2D grid or a 2D grid with channels")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(RAW_GRID_MAGIC)
        fh.write(struct.pack("<III", w, h, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_raw_grid(path) -> np.ndarray:
    """Read a raw f32 grid written by :func:`write_raw_grid`; returns (h, w, c)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RAW_GRID_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {RAW_GRID_MAGIC!r}")
        w, h, c = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(4 * w * h * c), dtype="<f4")
    if data.size != w * h * c:
        raise ValueError("truncated raw grid file")
    return data.reshape(h, w, c).astype(np.float64)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a grayscale image in [0, 1] as binary 8-bit PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM output expects a 2D grayscale image")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM back to floats in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    pixels = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
    return pixels.reshape(h, w).astype(np.float64) / maxval


def diverging_rgb(values: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Map a signed scalar field to RGB with red positive, blue negative, white zero."""
    vals = np.asarray(values, dtype=np.float64)
    if vmax is None:
        vmax = float(np.nanmax(np.abs(vals))) or 1.0
    t = np.clip(vals / vmax, -1.0, 1.0)
    rgb = np.empty(vals.shape + (3,), dtype=np.uint8)
    pos = np.clip(t, 0.0, 1.0)
    neg = np.clip(-t, 0.0, 1.0)
    rgb[..., 0] = np.round(255 * (1.0 - neg)).astype(np.uint8)
    rgb[..., 1] = np.round(255 * (1.0 - np.maximum(pos, neg))).astype(np.uint8)
    rgb[..., 2] = np.round(255 * (1.0 - pos)).astype(np.uint8)
    return rgb


def write_png(path, rgb: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as PNG."""
    from PIL import Image

    arr = np.asarray(rgb)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected (h, w, 3) uint8 RGB data")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
