"""Planar geometry, rigid transforms and BEV raster primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

CellIndex = Tuple[int, int]  # (row, col) == (y index, x index)


class SpecMismatchError(ValueError):
    """Two rasters were combined whose grid specs differ."""


class Point2(NamedTuple):
    x: float
    y: float

    def __add__(self, other):  # type: ignore[override]
        return Point2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Point2(self.x - other[0], self.y - other[1])

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform2D:
    """Proper rigid motion ``p -> R p + t`` in the plane."""

    rotation: np.ndarray
    translation: Point2 = Point2(0.0, 0.0)

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        if rot.shape != (2, 2):
            raise ValueError(f"rotation must be 2x2, got {rot.shape}")
        if not np.allclose(rot.T @ rot, np.eye(2), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", _readonly(rot))
        object.__setattr__(self, "translation", Point2(float(self.translation[0]), float(self.translation[1])))

    @classmethod
    def identity(cls) -> "RigidTransform2D":
        return cls(np.eye(2))

    @classmethod
    def from_yaw(cls, yaw: float, x: float = 0.0, y: float = 0.0) -> "RigidTransform2D":
        c, s = math.cos(yaw), math.sin(yaw)
        return cls(np.array([[c, -s], [s, c]]), Point2(x, y))

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def apply(self, p) -> Point2:
        r = self.rotation
        x, y = float(p[0]), float(p[1])
        return Point2(r[0, 0] * x + r[0, 1] * y + self.translation.x,
                      r[1, 0] * x + r[1, 1] * y + self.translation.y)

    def apply_array(self, pts: np.ndarray) -> np.ndarray:
        """Transform an ``(..., 2)`` array of points."""
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + np.asarray(self.translation)

    def rotate(self, v) -> Point2:
        r = self.rotation
        return Point2(r[0, 0] * v[0] + r[0, 1] * v[1], r[1, 0] * v[0] + r[1, 1] * v[1])

    def compose(self, other: "RigidTransform2D") -> "RigidTransform2D":
        """``self ∘ other``: apply ``other`` first."""
        rot = self.rotation @ other.rotation
        return RigidTransform2D(rot, self.apply(other.translation))

    def inverse(self) -> "RigidTransform2D":
        rt = self.rotation.T
        t = -(rt @ np.asarray(self.translation))
        return RigidTransform2D(rt, Point2(t[0], t[1]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, RigidTransform2D):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation)) and self.translation == other.translation

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation))

    def __repr__(self) -> str:
        return f"RigidTransform2D(yaw={self.yaw:.6g}, translation={tuple(self.translation)})"


def transform_point(t: RigidTransform2D, p: Point2) -> Point2:
    return t.apply(p)


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -51.2
    x_max: float = 51.2
    y_min: float = -51.2
    y_max: float = 51.2
    cell_size: float = 0.8

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        for span in (self.x_max - self.x_min, self.y_max - self.y_min):
            n = span / self.cell_size
            if n < 0.5 or abs(n - round(n)) > 1e-9:
                raise ValueError(f"extent {span} is not a positive multiple of cell_size {self.cell_size}")

    @property
    def cols(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell_size))

    @property
    def rows(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell_size))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    def cell_center(self, row: int, col: int) -> Point2:
        return Point2(self.x_min + (col + 0.5) * self.cell_size,
                      self.y_min + (row + 0.5) * self.cell_size)

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(xs, ys)`` meshes of all cell centers, each of ``shape``."""
        xs = self.x_min + (np.arange(self.cols) + 0.5) * self.cell_size
        ys = self.y_min + (np.arange(self.rows) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)


DEFAULT_SPEC = GridSpec()


def world_to_cell(spec: GridSpec, p: Point2) -> Optional[CellIndex]:
    x, y = float(p[0]), float(p[1])
    if not (spec.x_min <= x < spec.x_max and spec.y_min <= y < spec.y_max):
        return None
    col = int(math.floor((x - spec.x_min) / spec.cell_size))
    row = int(math.floor((y - spec.y_min) / spec.cell_size))
    # rounding can push a point just below the max edge onto the next index
    if row >= spec.rows or col >= spec.cols:
        return None
    return (row, col)


def world_to_cell_array(spec: GridSpec, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``world_to_cell``: returns ``(rows, cols, valid)``."""
    pts = np.asarray(pts, dtype=np.float64)
    col = np.floor((pts[..., 0] - spec.x_min) / spec.cell_size).astype(np.int64)
    row = np.floor((pts[..., 1] - spec.y_min) / spec.cell_size).astype(np.int64)
    valid = ((pts[..., 0] >= spec.x_min) & (pts[..., 0] < spec.x_max)
             & (pts[..., 1] >= spec.y_min) & (pts[..., 1] < spec.y_max)
             & (row >= 0) & (row < spec.rows) & (col >= 0) & (col < spec.cols))
    return row, col, valid


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable row-major raster over a :class:`GridSpec`."""

    spec: GridSpec
    cells: np.ndarray
    dtype = np.float64

    def __post_init__(self):
        cells = np.array(self.cells, dtype=self.dtype)
        if cells.shape != self.spec.shape:
            raise ValueError(f"cells shape {cells.shape} does not match spec {self.spec.shape}")
        object.__setattr__(self, "cells", _readonly(self._normalize(cells)))

    def _normalize(self, cells: np.ndarray) -> np.ndarray:
        return cells

    @classmethod
    def zeros(cls, spec: GridSpec = DEFAULT_SPEC):
        return cls(spec, np.zeros(spec.shape, dtype=cls.dtype))

    def same_spec(self, other: "Grid") -> None:
        if self.spec != other.spec:
            raise SpecMismatchError(f"grid spec mismatch: {self.spec} vs {other.spec}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return type(self) is type(other) and self.spec == other.spec and np.array_equal(self.cells, other.cells)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.rows}x{self.spec.cols})"


class OccupancyGrid(Grid):
    """Non-negative hit counts per cell."""

    dtype = np.int64

    def _normalize(self, cells):
        if (cells < 0).any():
            raise ValueError("occupancy counts must be non-negative")
        return cells


class CellMask(Grid):
    dtype = np.bool_

    @property
    def count(self) -> int:
        return int(self.cells.sum())


class Heatmap(Grid):
    """Relevance raster; values are clamped into [0, 1]."""

    def _normalize(self, cells):
        if not np.isfinite(cells).all():
            raise ValueError("heatmap contains non-finite values")
        return np.clip(cells, 0.0, 1.0)


def mask_iou(a: CellMask, b: CellMask) -> float:
    a.same_spec(b)
    union = int(np.count_nonzero(a.cells | b.cells))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.cells & b.cells)) / union


# --- export ---------------------------------------------------------------

def _to_bytes(grid: Grid) -> np.ndarray:
    cells = grid.cells
    if isinstance(grid, CellMask):
        img = np.where(cells, 255, 0)
    elif isinstance(grid, Heatmap):
        img = np.rint(cells * 255.0)
    else:
        peak = cells.max() if cells.size else 0
        img = np.zeros(cells.shape) if peak == 0 else np.rint(cells * (255.0 / peak))
    # image rows run top-down, so +y ends up at the top
    return img.astype(np.uint8)[::-1]


def write_pgm(grid: Union[Grid, np.ndarray], path: Union[str, Path]) -> None:
    """Write a binary portable graymap (P5)."""
    img = _to_bytes(grid) if isinstance(grid, Grid) else np.asarray(grid, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a P5 graymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_csv(grid: Grid, path: Union[str, Path]) -> None:
    """Flat ``row,col,value`` dump in row-major order."""
    rows, cols = grid.spec.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write("row,col,value\n")
        for r in range(rows):
            for c in range(cols):
                v = grid.cells[r, c]
                if isinstance(grid, Heatmap):
                    fh.write(f"{r},{c},{float(v):.9g}\n")
                else:
                    fh.write(f"{r},{c},{int(v)}\n")


def footprint_cells(spec: GridSpec, center: Point2, heading: float, length: float, width: float,
                    world_to_grid: Optional[RigidTransform2D] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Cells whose centers fall inside an oriented rectangle.

    Footprints smaller than a cell still claim the cell holding their center,
    so every in-range agent rasterizes to at least one cell.
    """
    if world_to_grid is not None:
        center = world_to_grid.apply(center)
        heading = heading + world_to_grid.yaw
    cx, cy = float(center[0]), float(center[1])
    reach = 0.5 * math.hypot(length, width) + spec.cell_size
    c0 = max(0, int(math.floor((cx - reach - spec.x_min) / spec.cell_size)))
    c1 = min(spec.cols - 1, int(math.floor((cx + reach - spec.x_min) / spec.cell_size)))
    r0 = max(0, int(math.floor((cy - reach - spec.y_min) / spec.cell_size)))
    r1 = min(spec.rows - 1, int(math.floor((cy + reach - spec.y_min) / spec.cell_size)))
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    if c0 > c1 or r0 > r1:
        return empty
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    dx = spec.x_min + (cols + 0.5) * spec.cell_size - cx
    dy = spec.y_min + (rows + 0.5) * spec.cell_size - cy
    c, s = math.cos(heading), math.sin(heading)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    inside = (np.abs(along) <= 0.5 * length + 1e-9) & (np.abs(across) <= 0.5 * width + 1e-9)
    if not inside.any():
        idx = world_to_cell(spec, Point2(cx, cy))
        if idx is None:
            return empty
        return np.array([idx[0]]), np.array([idx[1]])
    return rows[inside].astype(np.int64), cols[inside].astype(np.int64)


def rect_cells(spec: GridSpec, x_min: float, y_min: float, x_max: float, y_max: float,
               world_to_grid: Optional[RigidTransform2D] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Cells covered by an axis-aligned world rectangle."""
    center = Point2(0.5 * (x_min + x_max), 0.5 * (y_min + y_max))
    return footprint_cells(spec, center, 0.0, x_max - x_min, y_max - y_min, world_to_grid)
