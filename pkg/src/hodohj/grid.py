"""Uniformly sampled fields over boxes, with binary and CSV persistence.

Binary layout (little-endian throughout): a 16-byte header (12-byte magic +
uint32 format version), then ``n`` as uint64, the per-axis sample counts as
uint64, the lower then upper box bounds as float64, then the value array as
float64 in row-major (C) order.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = ["GridField", "GridFormatError", "lattice_points", "save_grid", "load_grid", "save_grid_csv"]

MAGIC = b"HJGRIDFIELD\x00"
FORMAT_VERSION = 1


class GridFormatError(ValueError):
    """Raised when a grid file does not conform to the binary layout."""


@dataclass(frozen=True)
class GridField:
    """Dense samples of a scalar function on a uniform box lattice."""

    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray
    values: np.ndarray  # shape == tuple(counts), C order

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        counts = np.atleast_1d(np.asarray(self.counts, dtype=np.int64))
        values = np.asarray(self.values, dtype=float)
        if lower.ndim != 1 or lower.shape != upper.shape or lower.shape != counts.shape:
            raise ValueError("lower, upper and counts must be 1-D and of equal length")
        if np.any(counts < 2):
            raise ValueError("each axis needs at least 2 samples")
        if np.any(upper <= lower):
            raise ValueError("degenerate box: upper must exceed lower on every axis")
        if values.shape != tuple(counts):
            values = values.reshape(tuple(counts))
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must all be finite")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (self.counts - 1)

    def axis(self, a: int) -> np.ndarray:
        return np.linspace(self.lower[a], self.upper[a], self.counts[a])

    def points(self) -> np.ndarray:
        """All sample coordinates, row-major, shape (prod(counts), n)."""
        return lattice_points(self.lower, self.upper, self.counts)

    @staticmethod
    def sample(fn, lower: Sequence[float], upper: Sequence[float], counts: Sequence[int]) -> "GridField":
        """Sample a callable point -> float on the lattice."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
        pts = lattice_points(lower, upper, counts)
        vals = np.array([fn(p) for p in pts], dtype=float).reshape(tuple(counts))
        return GridField(lower, upper, counts, vals)


def lattice_points(lower, upper, counts) -> np.ndarray:
    """Row-major lattice coordinates over a box, shape (prod(counts), n)."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
    axes = [np.linspace(lower[a], upper[a], counts[a]) for a in range(lower.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def save_grid(grid: GridField, path) -> None:
    path = Path(path)
    n = grid.n
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", n))
        fh.write(np.asarray(grid.counts, dtype="<u8").tobytes())
        fh.write(np.asarray(grid.lower, dtype="<f8").tobytes())
        fh.write(np.asarray(grid.upper, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def load_grid(path) -> GridField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 + 8:
        raise GridFormatError(f"{path}: file too short for a grid header")
    if raw[:12] != MAGIC:
        raise GridFormatError(f"{path}: bad magic bytes")
    (version,) = struct.unpack_from("<I", raw, 12)
    if version != FORMAT_VERSION:
        raise GridFormatError(f"{path}: unsupported format version {version}")
    (n,) = struct.unpack_from("<Q", raw, 16)
    if n < 1 or n > 64:
        raise GridFormatError(f"{path}: implausible dimension {n}")
    off = 24
    need = n * 8 * 3
    if len(raw) < off + need:
        raise GridFormatError(f"{path}: truncated axis metadata")
    counts = np.frombuffer(raw, dtype="<u8", count=n, offset=off).astype(np.int64)
    off += n * 8
    lower = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
    off += n * 8
    upper = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
    off += n * 8
    total = int(np.prod(counts))
    if len(raw) != off + total * 8:
        raise GridFormatError(
            f"{path}: value payload is {len(raw) - off} bytes, expected {total * 8}"
        )
    values = np.frombuffer(raw, dtype="<f8", count=total, offset=off).copy()
    return GridField(lower, upper, counts, values.reshape(tuple(counts)))


def save_grid_csv(grid: GridField, path) -> None:
    """One row per sample: coordinates then value, 17-significant-digit decimal."""
    path = Path(path)
    pts = grid.points()
    flat = grid.values.ravel()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{a + 1}" for a in range(grid.n)] + ["value"])
        for p, v in zip(pts, flat):
            writer.writerow([format(c, ".17g") for c in p] + [format(v, ".17g")])
