"""Homogenized elliptic problem div[(I + k M) grad psi_c] = f.

Solved by the fixed-point iteration grad psi_n = grad Delta^{-1} f -
L[grad psi_{n-1}] with L g = grad Delta^{-1} div(k M g), which contracts for
small sup k. The operator L has two interchangeable backends: a Fourier
multiplier xi (xi.g_hat)/|xi|^2 on a padded periodic box, and a direct
principal-value quadrature of the second-derivative kernel used as an
independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import ScalarGridField, VectorGridField
from .geometry import VolumeFraction
from .potential import grad_psi0_on_grid

_K2_CHUNK = 1 << 24


@dataclass
class EffectiveMatrix:
    """Shape matrix of the medium; disks give twice the identity."""

    m: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        if self.m.shape != (2, 2):
            raise ValueError("effective matrix must be 2x2")

    @classmethod
    def disk(cls) -> "EffectiveMatrix":
        return cls(2.0 * np.eye(2))

    @property
    def m_hat(self) -> np.ndarray:
        """The rotated matrix entering the modified curl relation."""
        m = self.m
        return np.array([[m[1, 1], -m[1, 0]], [-m[0, 1], m[0, 0]]])


@dataclass
class HomogSolution:
    grad: VectorGridField
    iterations: int
    last_increment: float
    increments: list[float] = field(default_factory=list)


def _k_values(k) -> ScalarGridField:
    return k.field if isinstance(k, VolumeFraction) else k


def _check_padding(k_field: ScalarGridField):
    box = k_field.support_box()
    if box is None:
        return
    nx, ny = k_field.shape
    x0 = k_field.origin[0]
    y0 = k_field.origin[1]
    x1 = x0 + nx * k_field.h
    y1 = y0 + ny * k_field.h
    extent = max(box[2] - box[0], box[3] - box[1])
    clearance = min(box[0] - x0, box[1] - y0, x1 - box[2], y1 - box[3])
    if clearance < extent - 1e-12:
        raise ValueError(
            "insufficient padding: support of k needs clearance >= its extent "
            f"on every side (clearance {clearance:.3g}, extent {extent:.3g})"
        )


def apply_l_spectral(
    g: VectorGridField, k, M: EffectiveMatrix
) -> VectorGridField:
    """grad Delta^{-1} div (k M g) by the periodic Fourier multiplier.

    The grid itself is the padded box; the support of k must keep clearance
    at least its own extent from every edge so periodization images stay
    negligible (their leading contributions cancel by lattice symmetry).
    Killing the zero mode forces a zero box mean, whereas the free-space
    field of a density with integral P has box mean P/(2 |box|) (the kernel
    integrated over a large disk contributes exactly P/2); that constant is
    restored so the output follows the decay-at-infinity convention.
    """
    kf = _k_values(k)
    _check_padding(kf)
    if kf.shape != g.values.shape[:2]:
        raise ValueError("k and g must share the grid")
    w = kf.values[:, :, None] * np.einsum("ij,xyj->xyi", M.m, g.values)
    nx, ny = w.shape[:2]
    wx_hat = np.fft.fft2(w[:, :, 0])
    wy_hat = np.fft.fft2(w[:, :, 1])
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=g.h)[:, None]
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=g.h)[None, :]
    k2 = kx**2 + ky**2
    k2[0, 0] = 1.0
    div_hat = (kx * wx_hat + ky * wy_hat) / k2
    div_hat[0, 0] = 0.0
    # the unpaired Nyquist modes break Hermitian symmetry for the cross
    # terms of the multiplier; drop them (their content is below the
    # truncation error of any resolved field)
    if nx % 2 == 0:
        div_hat[nx // 2, :] = 0.0
    if ny % 2 == 0:
        div_hat[:, ny // 2] = 0.0
    out = np.stack(
        [np.fft.ifft2(kx * div_hat).real, np.fft.ifft2(ky * div_hat).real], axis=2
    )
    area = nx * ny * g.h**2
    out += w.sum(axis=(0, 1)) * g.h**2 / (2.0 * area)
    return VectorGridField(g.origin.copy(), g.h, out)


def k2_kernel_sum(
    src_centers: np.ndarray,
    src_values: np.ndarray,
    h: float,
    targets: np.ndarray,
    self_pairs: np.ndarray | None = None,
) -> np.ndarray:
    """Midpoint quadrature of the kernel (d_ij|z|^2 - 2 z_i z_j)/(2 pi |z|^4)
    applied to a vector density; optional boolean (m, n) mask removes
    target/source pairs (the excluded self cells of the PV sum)."""
    targets = np.atleast_2d(targets)
    m = targets.shape[0]
    n = src_centers.shape[0]
    out = np.zeros((m, 2))
    step = max(_K2_CHUNK // max(n, 1), 1)
    for start in range(0, m, step):
        sl = slice(start, min(start + step, m))
        zx = targets[sl, 0:1] - src_centers[None, :, 0]
        zy = targets[sl, 1:2] - src_centers[None, :, 1]
        r2 = zx * zx + zy * zy
        bad = r2 <= 0.0
        if self_pairs is not None:
            bad = bad | self_pairs[sl]
        inv2 = np.where(bad, 0.0, 1.0 / np.where(bad, 1.0, r2))
        inv4 = inv2 * inv2
        wx = src_values[None, :, 0]
        wy = src_values[None, :, 1]
        zw = zx * wx + zy * wy
        out[sl, 0] = (wx * inv2 - 2.0 * zw * zx * inv4).sum(axis=1)
        out[sl, 1] = (wy * inv2 - 2.0 * zw * zy * inv4).sum(axis=1)
    return out * h * h / (2.0 * np.pi)


def k1_kernel_sum(
    src_centers: np.ndarray,
    src_values: np.ndarray,
    h: float,
    targets: np.ndarray,
) -> np.ndarray:
    """Midpoint quadrature of div Delta^{-1} applied to a vector density:
    sum of (z . w)/(2 pi |z|^2); the self cell (z = 0) contributes zero."""
    targets = np.atleast_2d(targets)
    m = targets.shape[0]
    n = src_centers.shape[0]
    out = np.zeros(m)
    step = max(_K2_CHUNK // max(n, 1), 1)
    for start in range(0, m, step):
        sl = slice(start, min(start + step, m))
        zx = targets[sl, 0:1] - src_centers[None, :, 0]
        zy = targets[sl, 1:2] - src_centers[None, :, 1]
        r2 = zx * zx + zy * zy
        inv = np.where(r2 > 0.0, 1.0 / np.where(r2 > 0, r2, 1.0), 0.0)
        out[sl] = (
            (zx * src_values[None, :, 0] + zy * src_values[None, :, 1]) * inv
        ).sum(axis=1)
    return out * h * h / (2.0 * np.pi)


def apply_l_direct(
    g: VectorGridField, k, M: EffectiveMatrix, targets: np.ndarray
) -> np.ndarray:
    """Independent backend: PV quadrature excluding the self cell plus the
    local term +1/2 (k M g)(x); evaluated at arbitrary target points."""
    kf = _k_values(k)
    if kf.shape != g.values.shape[:2]:
        raise ValueError("k and g must share the grid")
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    w_all = kf.values[:, :, None] * np.einsum("ij,xyj->xyi", M.m, g.values)
    ixs, iys = np.nonzero(kf.values)
    centers = np.stack(
        [
            kf.origin[0] + (ixs + 0.5) * kf.h,
            kf.origin[1] + (iys + 0.5) * kf.h,
        ],
        axis=1,
    )
    w = w_all[ixs, iys]
    tix, tiy, inside = kf.cell_index(targets)
    self_pairs = (ixs[None, :] == tix[:, None]) & (iys[None, :] == tiy[:, None])
    out = k2_kernel_sum(centers, w, kf.h, targets, self_pairs=self_pairs)
    # local delta term at targets landing on a source cell
    hit = inside & (kf.values[np.clip(tix, 0, kf.shape[0] - 1),
                              np.clip(tiy, 0, kf.shape[1] - 1)] != 0.0)
    if np.any(hit):
        out[hit] += 0.5 * w_all[tix[hit], tiy[hit]]
    return out


def solve_psic_from_grad(
    psi0_grad: VectorGridField,
    k,
    M: EffectiveMatrix,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> HomogSolution:
    """Fixed-point iteration from a precomputed free-space gradient."""
    kf = _k_values(k)
    if isinstance(k, VolumeFraction) and k.inf_norm > k.eps0**2 + 1e-12:
        raise ValueError("volume fraction exceeds its declared eps0^2 bound")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    ref = max(psi0_grad.l2_norm(), 1e-300)
    grad = VectorGridField(psi0_grad.origin.copy(), psi0_grad.h, psi0_grad.values.copy())
    increments: list[float] = []
    for it in range(1, max_iter + 1):
        correction = apply_l_spectral(grad, kf, M)
        new_vals = psi0_grad.values - correction.values
        inc = float(np.sqrt(((new_vals - grad.values) ** 2).sum() * grad.h**2)) / ref
        increments.append(inc)
        grad = VectorGridField(grad.origin, grad.h, new_vals)
        if inc < tol:
            return HomogSolution(grad, it, inc, increments)
        if len(increments) >= 3 and increments[-1] > increments[-2] > increments[-3]:
            raise RuntimeError(
                "fixed point is not contracting (two consecutive increment "
                "growths); reduce sup|k|"
            )
    return HomogSolution(grad, max_iter, increments[-1], increments)


def solve_psic(
    f: ScalarGridField,
    k,
    M: EffectiveMatrix,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> HomogSolution:
    """Solve for grad psi_c with f given on the same (padded) grid as k."""
    return solve_psic_from_grad(grad_psi0_on_grid(f), k, M, tol, max_iter)


def first_order_expansion(
    f: ScalarGridField, k, M: EffectiveMatrix
) -> VectorGridField:
    """One fixed-point step: grad(psi_0) - L[grad(psi_0)]."""
    g0 = grad_psi0_on_grid(f)
    return first_order_from_grad(g0, k, M)


def first_order_from_grad(g0: VectorGridField, k, M: EffectiveMatrix) -> VectorGridField:
    corr = apply_l_spectral(g0, _k_values(k), M)
    return VectorGridField(g0.origin.copy(), g0.h, g0.values - corr.values)


def velocity_c(sol: HomogSolution, x) -> np.ndarray:
    """Bilinear interpolation of the perpendicular gradient at interior points."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    g = sol.grad
    nx, ny = g.values.shape[:2]
    lo = g.origin + 0.5 * g.h
    hi = g.origin + (np.array([nx, ny]) - 0.5) * g.h
    if np.any(pts < lo[None, :]) or np.any(pts > hi[None, :]):
        raise ValueError("velocity requested outside the grid interior")
    grads = g.sample_bilinear(pts)
    out = np.stack([-grads[:, 1], grads[:, 0]], axis=1)
    return out[0] if np.asarray(x).ndim == 1 else out


def scalar_from_gradient(grad: VectorGridField, anchor_value: float = 0.0) -> ScalarGridField:
    """Path integral of the gradient along grid lines, anchored at the
    lower-left cell (display helper; the solution is defined up to a constant)."""
    gx = grad.values[:, :, 0]
    gy = grad.values[:, :, 1]
    h = grad.h
    nx, ny = gx.shape
    psi = np.zeros((nx, ny))
    # integrate along the first row in x, then along columns in y
    psi[1:, 0] = np.cumsum(0.5 * (gx[:-1, 0] + gx[1:, 0]) * h)
    psi[:, 1:] = psi[:, 0:1] + np.cumsum(0.5 * (gy[:, :-1] + gy[:, 1:]) * h, axis=1)
    return ScalarGridField(grad.origin.copy(), h, psi + anchor_value)
