"""Brute-force reference solver for the exact perforated problem at small N.

Each hole carries a truncated exterior multipole series r^-m cos(m t),
r^-m sin(m t), m = 1..M (no log term, so every hole is automatically
flux-free). The coefficients are fit by least-squares collocation so that the
total stream function is constant on every hole boundary; the unknown
boundary constants are eliminated by subtracting per-hole means inside the
objective. Used as ground truth when validating the method of reflections.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import potential
from .geometry import PorousConfig

MAX_ORACLE_HOLES = 64  # desk-scale guard


@dataclass
class MultipoleSolution:
    config: PorousConfig
    source: object
    order: int
    coeffs: np.ndarray  # (N, 2*order): [cos_1, sin_1, cos_2, sin_2, ...]
    boundary_constants: np.ndarray  # (N,)
    residual: float
    rank: int
    cond: float
    flagged: bool

    def __post_init__(self):
        if not np.isfinite(self.residual):
            raise ValueError("collocation residual must be finite")


def collocation_points(config: PorousConfig, pts_per_hole: int) -> np.ndarray:
    theta = (np.arange(pts_per_hole) + 0.5) / pts_per_hole * 2.0 * np.pi
    ring = config.a * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return (config.centers[:, None, :] + ring[None, :, :]).reshape(-1, 2)


def _basis_matrix(config: PorousConfig, order: int, pts: np.ndarray) -> np.ndarray:
    """Values of every multipole basis function at every point.

    Column layout: hole-major, then (cos_1, sin_1, ..., cos_M, sin_M).
    """
    z = (pts[:, 0] + 1j * pts[:, 1])[:, None] - (
        config.centers[:, 0] + 1j * config.centers[:, 1]
    )[None, :]
    w = config.a / z  # (npts, N); |w| <= 1 on and outside the boundaries
    cols = np.empty((pts.shape[0], config.n_holes, 2 * order))
    power = np.ones_like(w)
    for m in range(1, order + 1):
        power = power * w
        cols[:, :, 2 * (m - 1)] = power.real
        cols[:, :, 2 * (m - 1) + 1] = -power.imag
    return cols.reshape(pts.shape[0], config.n_holes * 2 * order)


def _basis_gradients(config: PorousConfig, order: int, pts: np.ndarray) -> np.ndarray:
    """Gradients of the basis functions, shape (npts, ncols, 2)."""
    z = (pts[:, 0] + 1j * pts[:, 1])[:, None] - (
        config.centers[:, 0] + 1j * config.centers[:, 1]
    )[None, :]
    out = np.empty((pts.shape[0], config.n_holes, 2 * order, 2))
    am = 1.0
    zpow = 1.0 / z  # z^-(m+1) accumulator starts at z^-1, updated in loop
    for m in range(1, order + 1):
        am *= config.a
        zpow = zpow / z  # now z^-(m+1)
        deriv = -m * am * zpow  # F'(z) for F = a^m z^-m
        out[:, :, 2 * (m - 1), 0] = deriv.real
        out[:, :, 2 * (m - 1), 1] = -deriv.imag
        out[:, :, 2 * (m - 1) + 1, 0] = -deriv.imag
        out[:, :, 2 * (m - 1) + 1, 1] = -deriv.real
    return out.reshape(pts.shape[0], config.n_holes * 2 * order, 2)


def _center_per_hole(arr: np.ndarray, n_holes: int) -> np.ndarray:
    """Subtract each hole's per-block mean along the first axis."""
    blocks = arr.reshape(n_holes, -1, *arr.shape[1:])
    blocks = blocks - blocks.mean(axis=1, keepdims=True)
    return blocks.reshape(arr.shape)


def solve_collocation(
    source,
    config: PorousConfig,
    order: int = 8,
    pts_per_hole: int = 64,
    residual_tol: float = 1e-6,
) -> MultipoleSolution:
    """Least-squares fit of the multipole coefficients.

    Only the boundary oscillation is fit (per-hole means subtracted), which
    eliminates the unknown boundary constants; they are recovered afterwards
    as the mean of the solved field on each boundary.
    """
    if config.n_holes > MAX_ORACLE_HOLES:
        raise ValueError(
            f"oracle guard: N = {config.n_holes} exceeds {MAX_ORACLE_HOLES}"
        )
    if order < 1:
        raise ValueError("order must be >= 1")
    if pts_per_hole < 4 * order:
        raise ValueError("need pts_per_hole >= 4*order collocation points")
    pts = collocation_points(config, pts_per_hole)
    psi0 = potential.psi0_eval(source, pts)
    basis = _basis_matrix(config, order, pts)
    a_mat = _center_per_hole(basis, config.n_holes)
    rhs = -_center_per_hole(psi0, config.n_holes)
    coeffs, _, rank, sing = np.linalg.lstsq(a_mat, rhs, rcond=None)
    if rank < a_mat.shape[1]:
        cond = float(sing[0] / sing[-1]) if sing[-1] > 0 else np.inf
        raise RuntimeError(
            f"rank-deficient collocation system: rank {rank} < {a_mat.shape[1]}, "
            f"condition estimate {cond:.3e}"
        )
    total = psi0 + basis @ coeffs
    osc = _center_per_hole(total, config.n_holes)
    residual = float(np.abs(osc).max()) if osc.size else 0.0
    constants = total.reshape(config.n_holes, -1).mean(axis=1)
    cond = float(sing[0] / sing[-1]) if sing.size and sing[-1] > 0 else 1.0
    return MultipoleSolution(
        config=config,
        source=source,
        order=order,
        coeffs=coeffs.reshape(config.n_holes, 2 * order),
        boundary_constants=constants,
        residual=residual,
        rank=int(rank),
        cond=cond,
        flagged=bool(residual > residual_tol),
    )


def multipole_part_eval(sol: MultipoleSolution, x) -> np.ndarray:
    """The hole corrections alone (without psi_0)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    basis = _basis_matrix(sol.config, sol.order, pts)
    return basis @ sol.coeffs.ravel()


def multipole_part_grad(sol: MultipoleSolution, x) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    grads = _basis_gradients(sol.config, sol.order, pts)
    return np.einsum("pcd,c->pd", grads, sol.coeffs.ravel())


def oracle_eval(sol: MultipoleSolution, x):
    pts, single = potential._as_points(x)
    _check_outside(sol.config, pts)
    out = potential.psi0_eval(sol.source, pts) + multipole_part_eval(sol, pts)
    return float(out[0]) if single else out


def oracle_gradient(sol: MultipoleSolution, x) -> np.ndarray:
    pts, single = potential._as_points(x)
    _check_outside(sol.config, pts)
    out = potential.grad_psi0_eval(sol.source, pts) + multipole_part_grad(sol, pts)
    return out[0] if single else out


def oracle_velocity(sol: MultipoleSolution, x) -> np.ndarray:
    g = np.atleast_2d(oracle_gradient(sol, x))
    out = np.stack([-g[:, 1], g[:, 0]], axis=1)
    return out[0] if np.asarray(x).ndim == 1 else out


def _check_outside(config, pts):
    if config.n_holes and np.any(config.contains(pts)):
        raise ValueError("oracle evaluated inside a hole")


def equivalent_dipoles(sol: MultipoleSolution) -> np.ndarray:
    """The m=1 coefficients expressed as dipole vectors of V^a[A]."""
    return sol.coeffs[:, 0:2] / sol.config.a


def boundary_deviation(sol: MultipoleSolution, samples: int = 256) -> float:
    """Max sampled standard deviation of the solution over hole boundaries."""
    theta = (np.arange(samples) + 0.3) / samples * 2.0 * np.pi
    ring = sol.config.a * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    worst = 0.0
    for c in sol.config.centers:
        vals = oracle_eval(sol, c[None, :] + ring)
        worst = max(worst, float(vals.std()))
    return worst


def flux_integral(sol: MultipoleSolution, hole: int, radius_factor: float = 1.0,
                  samples: int = 512) -> float:
    """Quadrature of the normal derivative around one hole (should vanish)."""
    c = sol.config.centers[hole]
    r = sol.config.a * radius_factor
    theta = (np.arange(samples) + 0.5) / samples * 2.0 * np.pi
    normals = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    pts = c[None, :] + r * normals
    grads = oracle_gradient(sol, pts)
    return float((grads * normals).sum() * (2.0 * np.pi * r / samples))


def circulation(sol: MultipoleSolution, hole: int, radius_factor: float = 1.5,
                samples: int = 512) -> float:
    """Line integral of velocity . tangent around one hole (zero: no log terms)."""
    c = sol.config.centers[hole]
    r = sol.config.a * radius_factor
    theta = (np.arange(samples) + 0.5) / samples * 2.0 * np.pi
    normals = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    tangents = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    pts = c[None, :] + r * normals
    vel = oracle_velocity(sol, pts)
    return float((vel * tangents).sum() * (2.0 * np.pi * r / samples))


def export_json(sol: MultipoleSolution, path) -> None:
    payload = {
        "config_hash": config_hash(sol.config),
        "order": sol.order,
        "residual": sol.residual,
        "flagged": sol.flagged,
        "boundary_constants": sol.boundary_constants.tolist(),
        "coefficients": sol.coeffs.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def config_hash(config: PorousConfig) -> str:
    blob = json.dumps(
        {
            "centers": np.round(config.centers, 15).tolist(),
            "a": config.a,
            "d": config.d,
            "eps0": config.eps0,
            "box": config.kpm_box.as_tuple(),
        },
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
