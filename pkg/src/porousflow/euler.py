"""Vorticity transport by characteristics in two velocity closures.

Vorticity is discretized as blob-regularized particles whose weights never
change (transport). The perforated setting closes the velocity with the
3-level method of reflections built from the current particles; the
homogenized setting uses the first-order corrected field u_0 + perp-grad phi
with phi the volume-fraction correction, recomputed each step by direct
quadrature over the k grid (a full fixed-point solve sits behind a flag).
Side-by-side runs from identical particles produce the stability time series.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import homogenized, potential, reflections
from .fields import ScalarGridField, fmt
from .geometry import Box, PorousConfig, VolumeFraction
from .homogenized import EffectiveMatrix


@dataclass
class VortexParticles:
    positions: np.ndarray  # (P, 2)
    weights: np.ndarray  # (P,)
    blob: float
    omega_max: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float)).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.positions.shape[0] != self.weights.shape[0]:
            raise ValueError("positions and weights must have matching lengths")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("particle positions must be finite")
        if self.blob < 0.0:
            raise ValueError("blob radius must be nonnegative")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def total_circulation(self) -> float:
        return float(self.weights.sum())

    def absolute_circulation(self) -> float:
        return float(np.abs(self.weights).sum())


@dataclass
class FlowState:
    t: float
    particles: VortexParticles
    support_distance: float = np.inf

    def __post_init__(self):
        if self.t < 0.0:
            raise ValueError("time must be nonnegative")
        if self.support_distance < 0.0:
            raise ValueError("support distance must be nonnegative")


def discretize_vorticity(
    omega0: ScalarGridField,
    h_p: float,
    blob: float,
    kpm_box: Box | None = None,
    margin: float = 0.0,
) -> VortexParticles:
    """Particles at spacing h_p carrying weight omega * h_p^2.

    The initial support must stay at least ``margin`` away from the porous
    box when one is given.
    """
    box = omega0.support_box()
    if box is None:
        return VortexParticles(np.zeros((0, 2)), np.zeros(0), blob)
    nx = max(int(np.ceil((box[2] - box[0]) / h_p)), 1)
    ny = max(int(np.ceil((box[3] - box[1]) / h_p)), 1)
    xs = box[0] + (np.arange(nx) + 0.5) * h_p
    ys = box[1] + (np.arange(ny) + 0.5) * h_p
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    vals = omega0.sample_bilinear(pts)
    keep = vals != 0.0
    pts, vals = pts[keep], vals[keep]
    if kpm_box is not None and pts.shape[0]:
        if float(kpm_box.distance(pts).min()) < margin:
            raise ValueError(
                "vorticity support violates the required margin from the porous box"
            )
    return VortexParticles(pts, vals * h_p**2, blob, omega_max=omega0.inf_norm())


@dataclass
class PerforatedSetting:
    config: PorousConfig
    n_levels: int = 3
    margin: float = 0.0  # support-control distance delta

    def label(self) -> str:
        return "perforated"


@dataclass
class HomogenizedSetting:
    k: VolumeFraction
    M: EffectiveMatrix
    margin: float = 0.0
    full_solve: bool = False
    tol: float = 1e-10
    max_iter: int = 50

    def label(self) -> str:
        return "homogenized"

    def kpm_box(self) -> Box | None:
        box = self.k.field.support_box()
        return Box(*box) if box is not None else None


def velocity_field(state: FlowState, setting, x) -> np.ndarray:
    """Velocity of the chosen closure at points x from the state's particles."""
    pts, single = potential._as_points(x)
    out = _velocity_batch(pts, state.particles, setting)
    return out[0] if single else out


def _velocity_batch(pts: np.ndarray, particles: VortexParticles, setting) -> np.ndarray:
    if particles.count == 0:
        return np.zeros((pts.shape[0], 2))
    u = potential.velocity0_eval(particles, pts)
    if isinstance(setting, PerforatedSetting):
        cfg = setting.config
        if cfg.n_holes == 0:
            return u
        stream = reflections.run_reflections(particles, cfg, setting.n_levels)
        grad = stream.correction_grad(pts)
        u[:, 0] -= grad[:, 1]
        u[:, 1] += grad[:, 0]
        return u
    if isinstance(setting, HomogenizedSetting):
        grad = _homog_correction_grad(pts, particles, setting)
        u[:, 0] -= grad[:, 1]
        u[:, 1] += grad[:, 0]
        return u
    raise TypeError(f"unknown velocity setting {setting!r}")


def _homog_correction_grad(pts, particles, setting: HomogenizedSetting) -> np.ndarray:
    """grad of the volume-fraction correction phi at the evaluation points.

    First order: phi = -div Delta^{-1}(k M grad psi_0); the full solve
    iterates grad psi on the k cells with the direct backend before the final
    evaluation.
    """
    kf = setting.k.field
    centers, kvals = kf.nonzero_cells()
    if centers.shape[0] == 0:
        return np.zeros((pts.shape[0], 2))
    ixs, iys = np.nonzero(kf.values)
    grad_cells = potential.grad_psi0_eval(particles, centers)
    if setting.full_solve:
        grad_cells = _iterate_on_cells(
            centers, kvals, kf.h, grad_cells, setting, ixs, iys
        )
    w = kvals[:, None] * (grad_cells @ setting.M.m.T)
    return -homogenized.k2_kernel_sum(centers, w, kf.h, pts)


def _iterate_on_cells(centers, kvals, h, grad0, setting, ixs, iys):
    """Fixed-point iteration restricted to the k cells (direct backend)."""
    self_pairs = (ixs[None, :] == ixs[:, None]) & (iys[None, :] == iys[:, None])
    grad = grad0.copy()
    ref = max(float(np.sqrt((grad0**2).sum() * h * h)), 1e-300)
    for _ in range(setting.max_iter):
        w = kvals[:, None] * (grad @ setting.M.m.T)
        corr = homogenized.k2_kernel_sum(centers, w, h, centers, self_pairs=self_pairs)
        corr += 0.5 * w
        new = grad0 - corr
        inc = float(np.sqrt(((new - grad) ** 2).sum() * h * h)) / ref
        grad = new
        if inc < setting.tol:
            break
    return grad


def _min_gap(setting) -> float:
    if isinstance(setting, PerforatedSetting):
        cfg = setting.config
        if cfg.n_holes:
            return max(cfg.d - 2.0 * cfg.a, 0.0)
    return np.inf


def _support_distance(particles: VortexParticles, setting) -> float:
    box = None
    if isinstance(setting, PerforatedSetting) and setting.config.n_holes:
        box = setting.config.kpm_box
    elif isinstance(setting, HomogenizedSetting):
        box = setting.kpm_box()
    if box is None or particles.count == 0:
        return np.inf
    return float(box.distance(particles.positions).min())


def step(state: FlowState, dt: float, setting) -> FlowState:
    """One RK4 step of all particles; weights are carried unchanged."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    parts = state.particles
    p0 = parts.positions
    k1 = _velocity_batch(p0, parts, setting)
    speed = float(np.hypot(k1[:, 0], k1[:, 1]).max()) if parts.count else 0.0
    limit = 0.5 * min(_min_gap(setting), setting.margin or np.inf)
    if np.isfinite(limit) and speed * dt > limit:
        raise ValueError(
            f"CFL guard violated: dt*max|u| = {speed * dt:.3g} exceeds {limit:.3g}"
        )
    k2 = _velocity_batch(p0 + 0.5 * dt * k1, _at(parts, p0 + 0.5 * dt * k1), setting)
    k3 = _velocity_batch(p0 + 0.5 * dt * k2, _at(parts, p0 + 0.5 * dt * k2), setting)
    k4 = _velocity_batch(p0 + dt * k3, _at(parts, p0 + dt * k3), setting)
    new_pos = p0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    new_parts = _at(parts, new_pos)
    return FlowState(
        t=state.t + dt,
        particles=new_parts,
        support_distance=_support_distance(new_parts, setting),
    )


def _at(parts: VortexParticles, positions) -> VortexParticles:
    return VortexParticles(positions, parts.weights, parts.blob, parts.omega_max)


def run_status(state: FlowState, setting) -> str:
    """'running', or 'halted' when the support control fails (the analogue of
    the exit time T_N) or a particle has entered a hole."""
    if isinstance(setting, PerforatedSetting) and setting.config.n_holes:
        if state.particles.count and np.any(
            setting.config.contains(state.particles.positions)
        ):
            return "halted"
    if setting.margin and state.support_distance < 0.5 * setting.margin:
        return "halted"
    return "running"


def smoothed_vorticity(particles: VortexParticles, pts: np.ndarray) -> np.ndarray:
    """Blob-kernel smoothing of the empirical vorticity measure."""
    if particles.count == 0:
        return np.zeros(np.atleast_2d(pts).shape[0])
    pts = np.atleast_2d(pts)
    d2 = max(float(particles.blob) ** 2, 1e-300)
    dx = pts[:, 0:1] - particles.positions[None, :, 0]
    dy = pts[:, 1:2] - particles.positions[None, :, 1]
    r2 = dx * dx + dy * dy + d2
    return (particles.weights[None, :] * d2 / (np.pi * r2 * r2)).sum(axis=1)


@dataclass
class ComparisonRecord:
    t: float
    traj_div_max: float
    vel_diff_sup: float
    omega_diff: float
    status_perforated: str
    status_homogenized: str


def run_comparison(
    particles: VortexParticles,
    perforated: PerforatedSetting,
    homogenized_setting: HomogenizedSetting,
    t_final: float,
    dt: float,
    probe_points: np.ndarray,
    record_every: int = 1,
) -> list[ComparisonRecord]:
    """Evolve the two closures side by side from identical particles.

    Records, per output time, the max over matched particles of the
    trajectory separation, the sup over the probe set of the velocity
    difference, and the sup over the probe set of the blob-smoothed vorticity
    difference. An early halt of either run is recorded, not fatal.
    """
    probe_points = np.atleast_2d(probe_points)
    state_n = FlowState(0.0, particles, _support_distance(particles, perforated))
    state_c = FlowState(0.0, particles, _support_distance(particles, homogenized_setting))
    status_n = run_status(state_n, perforated)
    status_c = run_status(state_c, homogenized_setting)
    records = [_record(state_n, state_c, perforated, homogenized_setting,
                       probe_points, status_n, status_c)]
    n_steps = int(round(t_final / dt))
    for i in range(1, n_steps + 1):
        if status_n == "running":
            state_n = step(state_n, dt, perforated)
            status_n = run_status(state_n, perforated)
        if status_c == "running":
            state_c = step(state_c, dt, homogenized_setting)
            status_c = run_status(state_c, homogenized_setting)
        if i % record_every == 0 or i == n_steps:
            records.append(
                _record(state_n, state_c, perforated, homogenized_setting,
                        probe_points, status_n, status_c)
            )
        if status_n != "running" and status_c != "running":
            break
    return records


def _record(state_n, state_c, perf, homog, probe, status_n, status_c):
    div = float(
        np.hypot(
            *(state_n.particles.positions - state_c.particles.positions).T
        ).max()
    ) if state_n.particles.count else 0.0
    un = _velocity_batch(probe, state_n.particles, perf)
    uc = _velocity_batch(probe, state_c.particles, homog)
    vel_diff = float(np.hypot(*(un - uc).T).max()) if probe.size else 0.0
    wn = smoothed_vorticity(state_n.particles, probe)
    wc = smoothed_vorticity(state_c.particles, probe)
    omega_diff = float(np.abs(wn - wc).max()) if probe.size else 0.0
    return ComparisonRecord(
        t=max(state_n.t, state_c.t),
        traj_div_max=div,
        vel_diff_sup=vel_diff,
        omega_diff=omega_diff,
        status_perforated=status_n,
        status_homogenized=status_c,
    )


def export_timeseries_csv(records: list[ComparisonRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "traj_div_max", "vel_diff_sup_O", "smoothed_omega_diff", "status"]
        )
        for r in records:
            status = r.status_perforated if r.status_perforated != "running" else (
                r.status_homogenized
            )
            writer.writerow(
                [fmt(r.t), fmt(r.traj_div_max), fmt(r.vel_diff_sup),
                 fmt(r.omega_diff), status]
            )


def export_particles_csv(state: FlowState, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "w"])
        for (x, y), w in zip(state.particles.positions, state.particles.weights):
            writer.writerow([fmt(state.t), fmt(x), fmt(y), fmt(w)])
