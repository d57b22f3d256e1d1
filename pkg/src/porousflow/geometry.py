"""Porous-medium configurations: many small disks inside a containment box.

A configuration holds the disk centers, the common radius ``a``, the declared
minimum center separation ``d`` and a smallness parameter ``eps0`` with
``a/d <= eps0 < 1/2``. Constructors build periodic lattices and seeded random
clouds; ``rasterize_mu`` produces the indicator density of the union of disks
and ``lattice_fraction`` its continuum limit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fields import ScalarGridField, fmt


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("box must have positive extent")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def contains_disk(self, center, radius) -> bool:
        return (
            center[0] - radius >= self.x0
            and center[0] + radius <= self.x1
            and center[1] - radius >= self.y0
            and center[1] + radius <= self.y1
        )

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from points (m,2) to the box (0 inside)."""
        points = np.atleast_2d(points)
        dx = np.maximum(
            np.maximum(self.x0 - points[:, 0], points[:, 0] - self.x1), 0.0
        )
        dy = np.maximum(
            np.maximum(self.y0 - points[:, 1], points[:, 1] - self.y1), 0.0
        )
        return np.hypot(dx, dy)

    def inflate(self, margin: float) -> "Box":
        return Box(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)


@dataclass
class PorousConfig:
    """Disk centers plus the (a, d, eps0) parameters of the medium."""

    centers: np.ndarray  # (N, 2)
    a: float
    d: float
    eps0: float
    kpm_box: Box

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))

    @property
    def n_holes(self) -> int:
        return self.centers.shape[0]

    @property
    def aspect(self) -> float:
        """The ratio a/d driving every estimate."""
        return self.a / self.d

    def min_center_distance(self) -> float:
        pts = self.centers
        if pts.shape[0] < 2:
            return np.inf
        best = np.inf
        for i in range(0, pts.shape[0], 512):
            chunk = pts[i : i + 512]
            diff = chunk[:, None, :] - pts[None, :, :]
            dist = np.hypot(diff[..., 0], diff[..., 1])
            dist[np.arange(chunk.shape[0]), i + np.arange(chunk.shape[0])] = np.inf
            best = min(best, float(dist.min()))
        return best

    def distance_to_holes(self, x: np.ndarray) -> np.ndarray:
        """Distance from points (m,2) to the nearest disk boundary (negative inside)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.n_holes == 0:
            return np.full(x.shape[0], np.inf)
        diff = x[:, None, :] - self.centers[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1]).min(axis=1)
        return dist - self.a

    def contains(self, x: np.ndarray) -> np.ndarray:
        """True where points lie strictly inside some hole (boundary excluded
        up to roundoff)."""
        return self.distance_to_holes(x) < -1e-9 * self.a


@dataclass
class VolumeFraction:
    """Bounded density approximating the disks' indicator, with sup bound eps0^2."""

    field: ScalarGridField
    eps0: float

    def __post_init__(self):
        if self.field.inf_norm() > self.eps0**2 + 1e-12:
            raise ValueError(
                f"volume fraction sup {self.field.inf_norm():.4g} exceeds "
                f"eps0^2 = {self.eps0**2:.4g}"
            )

    @property
    def inf_norm(self) -> float:
        return self.field.inf_norm()


def build_lattice(
    n_per_side: int, epsilon: float, box: Box, eps0: float = 0.25
) -> PorousConfig:
    """Uniform n x n lattice of disks in a square box with a = epsilon*side/n.

    The center spacing is d = side/n, so a/d = epsilon independently of n.
    A single hole uses d = side of the box (a finite convention; d only ever
    enters through a/d).
    """
    if n_per_side < 1:
        raise ValueError("n_per_side must be >= 1")
    if epsilon <= 0.0 or 2.0 * epsilon >= 1.0:
        raise ValueError("epsilon must satisfy 0 < 2*epsilon < 1")
    if abs(box.width - box.height) > 1e-12 * max(box.width, box.height):
        raise ValueError("lattice configurations require a square box")
    side = box.width
    n = n_per_side
    spacing = side / n
    a = epsilon * side / n
    d = spacing if n > 1 else side
    if a / d > eps0 or not eps0 < 0.5:
        raise ValueError(
            f"lattice violates a/d <= eps0 < 1/2: a/d = {a / d:.4g}, eps0 = {eps0:.4g}"
        )
    xs = box.x0 + (np.arange(n) + 0.5) * spacing
    ys = box.y0 + (np.arange(n) + 0.5) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return PorousConfig(centers, a, d, eps0, box)


def build_random(
    n_holes: int,
    a: float,
    d: float,
    box: Box,
    eps0: float = 0.25,
    seed: int = 0,
    max_attempts: int = 100_000,
) -> PorousConfig:
    """Seeded rejection sampling of centers with pairwise separation >= d."""
    if a / d > eps0 or not eps0 < 0.5:
        raise ValueError("random config violates a/d <= eps0 < 1/2")
    rng = np.random.default_rng(seed)
    lo = np.array([box.x0 + a, box.y0 + a])
    hi = np.array([box.x1 - a, box.y1 - a])
    if np.any(hi <= lo):
        raise ValueError("box too small for disks of radius a")
    centers: list[np.ndarray] = []
    for _ in range(n_holes):
        for attempt in range(max_attempts):
            p = lo + rng.random(2) * (hi - lo)
            if not centers:
                break
            arr = np.asarray(centers)
            if np.hypot(arr[:, 0] - p[0], arr[:, 1] - p[1]).min() >= d:
                break
        else:
            raise RuntimeError(
                f"rejection sampling failed after {max_attempts} attempts "
                f"(placed {len(centers)}/{n_holes} holes)"
            )
        centers.append(p)
    return PorousConfig(np.asarray(centers), a, d, eps0, box)


def lattice_fraction(config: PorousConfig, grid: ScalarGridField) -> VolumeFraction:
    """Continuum volume fraction of a lattice config: N*pi*a^2/|box| on the box.

    For the standard lattice with a = epsilon*side/n this value equals
    pi*epsilon^2 regardless of n.
    """
    box = config.kpm_box
    value = config.n_holes * np.pi * config.a**2 / box.area
    xs, ys = grid.cell_centers()
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    inside = (
        (gx > box.x0) & (gx < box.x1) & (gy > box.y0) & (gy < box.y1)
    )
    out = ScalarGridField(grid.origin.copy(), grid.h, np.where(inside, value, 0.0))
    return VolumeFraction(out, config.eps0)


def rasterize_mu(
    config: PorousConfig, grid: ScalarGridField, subcells: int = 16
) -> ScalarGridField:
    """Area-fraction rasterization of the union-of-disks indicator.

    Requires h <= a/4 so each disk spans several cells. Cells are subsampled
    subcells x subcells; only cells near a disk are touched.
    """
    if grid.h > config.a / 4 + 1e-15:
        raise ValueError(
            f"rasterize_mu resolution guard: h = {grid.h:.4g} exceeds a/4 = "
            f"{config.a / 4:.4g}"
        )
    values = np.zeros(grid.shape)
    h = grid.h
    off = (np.arange(subcells) + 0.5) / subcells * h
    nx, ny = grid.shape
    for cx, cy in config.centers:
        # cell index range overlapping the disk's bounding box
        i0 = max(int(np.floor((cx - config.a - grid.origin[0]) / h)) - 1, 0)
        i1 = min(int(np.ceil((cx + config.a - grid.origin[0]) / h)) + 1, nx)
        j0 = max(int(np.floor((cy - config.a - grid.origin[1]) / h)) - 1, 0)
        j1 = min(int(np.ceil((cy + config.a - grid.origin[1]) / h)) + 1, ny)
        if i0 >= i1 or j0 >= j1:
            continue
        bx = grid.origin[0] + np.arange(i0, i1)[:, None] * h + off[None, :]
        by = grid.origin[1] + np.arange(j0, j1)[:, None] * h + off[None, :]
        dx2 = (bx - cx) ** 2  # (bi, s)
        dy2 = (by - cy) ** 2  # (bj, s)
        inside = dx2[:, None, :, None] + dy2[None, :, None, :] < config.a**2
        frac = inside.mean(axis=(2, 3))
        values[i0:i1, j0:j1] += frac
    np.clip(values, 0.0, 1.0, out=values)
    return ScalarGridField(grid.origin.copy(), grid.h, values)


@dataclass
class ValidationReport:
    min_distance: float
    a_over_d: float
    distance_ok: bool
    aspect_ok: bool
    containment_ok: bool

    @property
    def ok(self) -> bool:
        return self.distance_ok and self.aspect_ok and self.containment_ok


def validate(config: PorousConfig) -> ValidationReport:
    """Check the configuration invariants; reports rather than raises."""
    min_dist = config.min_center_distance()
    distance_ok = bool(min_dist >= config.d * (1.0 - 1e-12))
    aspect_ok = bool(config.a / config.d <= config.eps0 and config.eps0 < 0.5)
    containment_ok = all(
        config.kpm_box.contains_disk(c, config.a) for c in config.centers
    )
    return ValidationReport(
        min_distance=float(min_dist),
        a_over_d=config.a / config.d,
        distance_ok=distance_ok,
        aspect_ok=aspect_ok,
        containment_ok=containment_ok,
    )


def save_config(config: PorousConfig, path, lattice_meta: dict | None = None, seed=None):
    """Flat key-value serialization plus a sibling .centers.csv file."""
    lines = []
    if lattice_meta:
        lines.append(f"lattice.n = {lattice_meta['n']}")
        lines.append(f"lattice.epsilon = {fmt(lattice_meta['epsilon'])}")
    box = config.kpm_box
    lines.append(f"box.x0 = {fmt(box.x0)}")
    lines.append(f"box.y0 = {fmt(box.y0)}")
    lines.append(f"box.x1 = {fmt(box.x1)}")
    lines.append(f"box.y1 = {fmt(box.y1)}")
    lines.append(f"a = {fmt(config.a)}")
    lines.append(f"d = {fmt(config.d)}")
    lines.append(f"eps0 = {fmt(config.eps0)}")
    if seed is not None:
        lines.append(f"seed = {seed}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(_centers_path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for cx, cy in config.centers:
            writer.writerow([fmt(cx), fmt(cy)])


def load_config(path) -> PorousConfig:
    kv = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
    box = Box(
        float(kv["box.x0"]), float(kv["box.y0"]), float(kv["box.x1"]), float(kv["box.y1"])
    )
    with open(_centers_path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["x", "y"]:
            raise ValueError("centers CSV must have columns x,y")
        centers = np.array([[float(r[0]), float(r[1])] for r in reader])
    return PorousConfig(centers, float(kv["a"]), float(kv["d"]), float(kv["eps0"]), box)


def _centers_path(path):
    return str(path) + ".centers.csv"


def fluid_mask(config: PorousConfig, grid: ScalarGridField) -> np.ndarray:
    """Boolean mask of cells lying fully outside every hole."""
    if config.n_holes == 0:
        return np.ones(grid.shape, dtype=bool)
    xs, ys = grid.cell_centers()
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    clearance = config.a + grid.h / np.sqrt(2.0)
    diff = pts[:, None, :] - config.centers[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1]).min(axis=1)
    return (dist >= clearance).reshape(grid.shape)
