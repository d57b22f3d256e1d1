"""Error functionals and convergence-rate fitting.

Discrete masked H^1-dot and L^2 norms on fluid regions, the spectral H^-1
surrogate for the weak distance between the disk indicator and the volume
fraction, the composite error predictor F, log-log exponent fits, and the
two-term decomposition report comparing the perforated solution against the
homogenized one.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import homogenized, oracle as oracle_mod, potential
from .fields import ScalarGridField, VectorGridField, make_grid
from .geometry import Box, PorousConfig, VolumeFraction, fluid_mask, rasterize_mu
from .homogenized import EffectiveMatrix
from .reflections import HybridStream


def h1dot_masked(
    g: VectorGridField, mask: np.ndarray, region: Box | None = None
) -> float:
    """sqrt of the masked cellwise sum of |g|^2 h^2, optionally restricted to
    cells whose centers lie in ``region``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != g.values.shape[:2]:
        raise ValueError("mask shape must match the grid")
    if region is not None:
        xs, ys = g.cell_centers()
        inx = (xs >= region.x0) & (xs <= region.x1)
        iny = (ys >= region.y0) & (ys <= region.y1)
        mask = mask & (inx[:, None] & iny[None, :])
    if not mask.any():
        warnings.warn("h1dot_masked: empty mask", stacklevel=2)
        return 0.0
    return float(np.sqrt((g.values[mask] ** 2).sum() * g.h**2))


def l2_masked(
    vals: np.ndarray, h: float, mask: np.ndarray | None = None
) -> float:
    vals = np.asarray(vals, dtype=float)
    if mask is not None:
        vals = vals[np.asarray(mask, dtype=bool)]
    return float(np.sqrt((vals**2).sum() * h**2))


def hminus1(g: ScalarGridField) -> float:
    """Spectral H^-1 norm on the grid's own periodic box.

    sqrt( (1/|box|) sum_xi |ghat(xi)|^2 / (1 + |xi|^2) ) with ghat = h^2 DFT,
    the zero mode included with weight one. The support of g must keep
    clearance at least its own extent from every edge so the box emulates the
    plane (constants are equivalent-norm only).
    """
    _check_hminus1_padding(g)
    nx, ny = g.shape
    ghat = np.fft.fft2(g.values) * g.h**2
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=g.h)[:, None]
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=g.h)[None, :]
    weight = 1.0 / (1.0 + kx**2 + ky**2)
    area = nx * ny * g.h**2
    return float(np.sqrt((np.abs(ghat) ** 2 * weight).sum() / area))


def _check_hminus1_padding(g: ScalarGridField):
    box = g.support_box()
    if box is None:
        return
    nx, ny = g.shape
    x1 = g.origin[0] + nx * g.h
    y1 = g.origin[1] + ny * g.h
    extent = max(box[2] - box[0], box[3] - box[1])
    clearance = min(
        box[0] - g.origin[0], box[1] - g.origin[1], x1 - box[2], y1 - box[3]
    )
    if clearance < extent - 1e-12:
        raise ValueError(
            "support touches the pad zone: clearance "
            f"{clearance:.3g} < extent {extent:.3g}"
        )


@dataclass
class ErrorBudget:
    """The composite predictor built from the geometry and the weak distance."""

    a_over_d: float
    mu_minus_k_hm1: float
    k_inf: float
    eta: float
    p: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")

    @property
    def f_value(self) -> float:
        hm1 = self.mu_minus_k_hm1
        return (
            self.a_over_d ** (3.0 - self.eta)
            + hm1 ** (self.p * (1.0 - self.eta) / (self.p + 2.0))
            + hm1**0.5
            + self.k_inf**2
        )

    @property
    def terms(self) -> dict:
        hm1 = self.mu_minus_k_hm1
        return {
            "aspect": self.a_over_d ** (3.0 - self.eta),
            "weak_low": hm1 ** (self.p * (1.0 - self.eta) / (self.p + 2.0)),
            "weak_half": hm1**0.5,
            "kinf_sq": self.k_inf**2,
        }

    def radius_ratio(self, a: float) -> float:
        """Diagnostic constant a / ||mu - k||^{p/(p+2)} (should stay bounded)."""
        hm1 = self.mu_minus_k_hm1
        if hm1 == 0.0:
            return np.inf if a > 0 else 0.0
        return a / hm1 ** (self.p / (self.p + 2.0))


def mu_minus_k_field(
    config: PorousConfig, k, h: float | None = None
) -> ScalarGridField:
    """mu - k rasterized on a shared padded grid (clearance = box extent)."""
    kf = k.field if isinstance(k, VolumeFraction) else k
    h = h if h is not None else config.a / 4.0
    box = config.kpm_box
    extent = max(box.width, box.height)
    world = make_grid(box.inflate(1.1 * extent + 4.0 * h).as_tuple(), h)
    mu = rasterize_mu(config, world)
    kvals = kf.sample_bilinear(world.centers_flat()).reshape(world.shape)
    return ScalarGridField(world.origin, world.h, mu.values - kvals)


def predictor_f(
    config: PorousConfig, k, eta: float = 0.5, h: float | None = None
) -> ErrorBudget:
    """Assemble the budget at p = 2; the weak norm uses the spectral surrogate."""
    kf = k.field if isinstance(k, VolumeFraction) else k
    diff = mu_minus_k_field(config, kf, h)
    return ErrorBudget(
        a_over_d=config.aspect,
        mu_minus_k_hm1=hminus1(diff),
        k_inf=kf.inf_norm(),
        eta=eta,
    )


def fit_exponent(xs, ys) -> tuple[float, float]:
    """Least-squares slope of log y against log x, with R^2."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size != ys.size or xs.size < 2:
        raise ValueError("need matching arrays with at least two points")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("log-log fit requires strictly positive data")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else 1.0 - ss_res / max(ss_tot, 1e-300)
    return float(slope), float(r2)


@dataclass
class GammaReport:
    grad_gamma1: float
    gamma2: float
    budget: ErrorBudget
    region: tuple[float, float, float, float]
    grid_h: float
    n_cells: int
    used_oracle: bool

    @property
    def total(self) -> float:
        return self.grad_gamma1 + self.gamma2

    def to_json(self) -> str:
        return json.dumps(
            {
                "grad_gamma1": self.grad_gamma1,
                "gamma2": self.gamma2,
                "total": self.total,
                "f_value": self.budget.f_value,
                "f_terms": self.budget.terms,
                "region": list(self.region),
                "grid_h": self.grid_h,
                "n_cells": self.n_cells,
                "used_oracle": self.used_oracle,
            },
            sort_keys=True,
        )


def gamma_decomposition_report(
    stream: HybridStream,
    psi0_grad: VectorGridField,
    psic_grad: VectorGridField,
    psitilde_grad: VectorGridField,
    k,
    M: EffectiveMatrix,
    region: Box,
    h: float,
    oracle_sol=None,
    eta: float = 0.5,
) -> GammaReport:
    """Norms of the two-term splitting on the fluid part of ``region``.

    The gradient term pairs the exact-solution surrogate (the oracle when
    given, otherwise the reflections stream itself) against the reflections
    stream plus the homogenized first-order defect; the L^2 term is the
    reflections correction minus the volume-fraction correction evaluated by
    quadrature over the k cells. The hole-free parts cancel exactly, so no
    base quadrature error enters.
    """
    config = stream.config
    kf = k.field if isinstance(k, VolumeFraction) else k
    probe = make_grid(region.as_tuple(), h)
    mask = fluid_mask(config, probe)
    if not mask.any():
        warnings.warn("gamma report: empty fluid mask", stacklevel=2)
    pts = probe.centers_flat()[mask.ravel()]

    # Gamma_1 gradient: (psi_N - psi_bar) + (psi_tilde - psi_c); hole-free
    # parts cancel within each pair.
    if oracle_sol is not None:
        d_perf = oracle_mod.multipole_part_grad(oracle_sol, pts) - stream.correction_grad(pts)
    else:
        d_perf = np.zeros((pts.shape[0], 2))
    d_homog = (psitilde_grad.sample_bilinear(pts) - psic_grad.sample_bilinear(pts))
    g1 = np.sqrt((((d_perf + d_homog) ** 2).sum(axis=1)).sum() * h**2)

    # Gamma_2 = psi_bar - psi_tilde = dipole corrections - phi.
    centers, kvals = kf.nonzero_cells()
    if centers.shape[0]:
        ixs, iys = np.nonzero(kf.values)
        w = kvals[:, None] * (psi0_grad.values[ixs, iys] @ M.m.T)
        phi = -homogenized.k1_kernel_sum(centers, w, kf.h, pts)
    else:
        phi = np.zeros(pts.shape[0])
    g2_vals = stream.correction_eval(pts) - phi
    g2 = np.sqrt((g2_vals**2).sum() * h**2)

    budget = predictor_f(config, kf, eta=eta)
    return GammaReport(
        grad_gamma1=float(g1),
        gamma2=float(g2),
        budget=budget,
        region=region.as_tuple(),
        grid_h=h,
        n_cells=int(mask.sum()),
        used_oracle=oracle_sol is not None,
    )


def masked_h1_error(
    grad_a: np.ndarray, grad_b: np.ndarray, h: float
) -> float:
    """H^1-dot distance between two gradient samplings on masked points."""
    diff = np.asarray(grad_a) - np.asarray(grad_b)
    return float(np.sqrt((diff**2).sum() * h**2))


def reflection_vs_oracle_h1(
    stream: HybridStream, oracle_sol, region: Box, h: float
) -> float:
    """Masked H^1-dot error between the reflections stream and the oracle on
    the fluid cells of ``region``. The common hole-free part cancels exactly,
    so only the correction fields are evaluated."""
    probe = make_grid(region.as_tuple(), h)
    mask = fluid_mask(stream.config, probe)
    pts = probe.centers_flat()[mask.ravel()]
    diff = oracle_mod.multipole_part_grad(oracle_sol, pts) - stream.correction_grad(pts)
    return float(np.sqrt((diff**2).sum() * h**2))
