"""Cell-centered Cartesian grid fields and their CSV/JSON serialization.

A field samples a compactly supported function at cell centers
``origin + (i + 1/2) * h`` with uniform spacing ``h`` in both directions.
Scalar fields hold vorticity sources and volume fractions; vector fields
hold gradient iterates of the homogenized solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def fmt(v) -> str:
    """Stable float formatting for CSV output (shortest round-trip repr)."""
    return repr(float(v))


@dataclass
class ScalarGridField:
    """Scalar samples on a uniform grid, indexed ``values[ix, iy]``."""

    origin: np.ndarray  # (2,) lower-left corner of the grid
    h: float
    values: np.ndarray  # (nx, ny)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.h <= 0.0:
            raise ValueError("grid spacing h must be positive")
        if self.values.ndim != 2:
            raise ValueError("values must be a 2D array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """1D arrays of x and y cell-center coordinates."""
        nx, ny = self.values.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.h
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.h
        return xs, ys

    def centers_flat(self) -> np.ndarray:
        """All cell centers as an (nx*ny, 2) array, C-order."""
        xs, ys = self.cell_centers()
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def integral(self) -> float:
        return float(self.values.sum() * self.h**2)

    def inf_norm(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def l1_norm(self) -> float:
        return float(np.abs(self.values).sum() * self.h**2)

    def support_box(self) -> tuple[float, float, float, float] | None:
        """Bounding box of nonzero cells, or None for the zero field."""
        ix, iy = np.nonzero(self.values)
        if ix.size == 0:
            return None
        x0 = self.origin[0] + ix.min() * self.h
        x1 = self.origin[0] + (ix.max() + 1) * self.h
        y0 = self.origin[1] + iy.min() * self.h
        y1 = self.origin[1] + (iy.max() + 1) * self.h
        return (float(x0), float(y0), float(x1), float(y1))

    def nonzero_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """(centers, values) restricted to nonzero cells."""
        ix, iy = np.nonzero(self.values)
        centers = np.stack(
            [
                self.origin[0] + (ix + 0.5) * self.h,
                self.origin[1] + (iy + 0.5) * self.h,
            ],
            axis=1,
        )
        return centers, self.values[ix, iy]

    def cell_index(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell indices containing points x (m, 2); third output flags in-grid."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        fx = (x[:, 0] - self.origin[0]) / self.h
        fy = (x[:, 1] - self.origin[1]) / self.h
        ix = np.floor(fx).astype(int)
        iy = np.floor(fy).astype(int)
        nx, ny = self.values.shape
        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        return ix, iy, inside

    def sample_bilinear(self, x: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of the field at points x, clamped at edges."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return _bilinear(self.origin, self.h, self.values[..., None], x)[:, 0]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            nx, ny = self.values.shape
            fh.write("origin_x,origin_y,h,nx,ny\n")
            fh.write(f"{fmt(self.origin[0])},{fmt(self.origin[1])},{fmt(self.h)},{nx},{ny}\n")
            for row in self.values:
                fh.write(",".join(fmt(v) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ScalarGridField":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header[:5] != ["origin_x", "origin_y", "h", "nx", "ny"]:
                raise ValueError(f"unrecognized grid CSV header in {path}")
            ox, oy, h, nx, ny = fh.readline().strip().split(",")
            vals = np.loadtxt(fh, delimiter=",", ndmin=2)
        vals = vals.reshape(int(nx), int(ny))
        return cls(np.array([float(ox), float(oy)]), float(h), vals)

    def descriptor(self) -> dict:
        """JSON-ready summary used in run outputs."""
        return {
            "origin": [float(self.origin[0]), float(self.origin[1])],
            "h": float(self.h),
            "nx": int(self.values.shape[0]),
            "ny": int(self.values.shape[1]),
            "min": float(self.values.min()) if self.values.size else 0.0,
            "max": float(self.values.max()) if self.values.size else 0.0,
            "integral": self.integral(),
            "support_box": self.support_box(),
        }

    def descriptor_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)


@dataclass
class VectorGridField:
    """Two-component field on the same cell-centered layout."""

    origin: np.ndarray
    h: float
    values: np.ndarray  # (nx, ny, 2)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != 2:
            raise ValueError("vector field values must have shape (nx, ny, 2)")
        if self.h <= 0.0:
            raise ValueError("grid spacing h must be positive")

    def component(self, i: int) -> ScalarGridField:
        return ScalarGridField(self.origin, self.h, self.values[:, :, i])

    def cell_centers(self):
        return ScalarGridField(self.origin, self.h, self.values[:, :, 0]).cell_centers()

    def l2_norm(self) -> float:
        return float(np.sqrt((self.values**2).sum() * self.h**2))

    def sample_bilinear(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return _bilinear(self.origin, self.h, self.values, x)

    def perp(self) -> "VectorGridField":
        """Rotate by 90 degrees: (g1, g2) -> (-g2, g1)."""
        out = np.empty_like(self.values)
        out[:, :, 0] = -self.values[:, :, 1]
        out[:, :, 1] = self.values[:, :, 0]
        return VectorGridField(self.origin, self.h, out)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            nx, ny = self.values.shape[:2]
            fh.write("origin_x,origin_y,h,nx,ny,components\n")
            fh.write(f"{fmt(self.origin[0])},{fmt(self.origin[1])},{fmt(self.h)},{nx},{ny},2\n")
            flat = self.values.reshape(nx * ny, 2)
            for gx, gy in flat:
                fh.write(f"{fmt(gx)},{fmt(gy)}\n")


def _bilinear(origin, h, values, x):
    """Shared bilinear kernel on cell-centered data; clamps to the edge cells."""
    nx, ny = values.shape[:2]
    fx = (x[:, 0] - origin[0]) / h - 0.5
    fy = (x[:, 1] - origin[1]) / h - 0.5
    i0 = np.clip(np.floor(fx).astype(int), 0, nx - 2)
    j0 = np.clip(np.floor(fy).astype(int), 0, ny - 2)
    tx = np.clip(fx - i0, 0.0, 1.0)[:, None]
    ty = np.clip(fy - j0, 0.0, 1.0)[:, None]
    v00 = values[i0, j0]
    v10 = values[i0 + 1, j0]
    v01 = values[i0, j0 + 1]
    v11 = values[i0 + 1, j0 + 1]
    return (
        v00 * (1 - tx) * (1 - ty)
        + v10 * tx * (1 - ty)
        + v01 * (1 - tx) * ty
        + v11 * tx * ty
    )


def make_grid(box: tuple[float, float, float, float], h: float) -> ScalarGridField:
    """Zero scalar field covering ``box`` with spacing h (box snapped outward)."""
    x0, y0, x1, y1 = box
    nx = int(np.ceil((x1 - x0) / h - 1e-12))
    ny = int(np.ceil((y1 - y0) / h - 1e-12))
    return ScalarGridField(np.array([x0, y0]), h, np.zeros((max(nx, 1), max(ny, 1))))


def rasterize(box, h, func) -> ScalarGridField:
    """Sample ``func(x, y)`` (vectorized) at the cell centers of a new grid."""
    g = make_grid(box, h)
    xs, ys = g.cell_centers()
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    g.values = np.asarray(func(gx, gy), dtype=float)
    return g


def radial_bump(center, radius, amplitude=1.0, power=2):
    """Compactly supported C^(power-1) profile amp*(1 - (r/R)^2)^power."""
    cx, cy = center

    def profile(x, y):
        r2 = ((x - cx) ** 2 + (y - cy) ** 2) / radius**2
        return amplitude * np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** power, 0.0)

    return profile


def disk_indicator(center, radius, amplitude=1.0):
    cx, cy = center

    def profile(x, y):
        r2 = (x - cx) ** 2 + (y - cy) ** 2
        return amplitude * (r2 < radius**2).astype(float)

    return profile
