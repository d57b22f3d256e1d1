"""Experiment orchestration: config-file driven runs emitting CSV and JSON.

Subcommand-style experiments (selected by the ``experiment`` key): geometry
diagnostics with the method of reflections, the two-term error decomposition
against the oracle and homogenized fields, homogenized expansion-rate sweeps,
Euler comparisons, and reflection-accuracy sweeps. Identical config and seed
produce byte-identical CSV output.

Exit codes: 0 success, 1 runtime numeric failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, euler, homogenized, oracle, potential, reflections
from .fields import ScalarGridField, make_grid, radial_bump, rasterize
from .geometry import (
    Box,
    PorousConfig,
    build_lattice,
    build_random,
    lattice_fraction,
    save_config,
)
from .homogenized import EffectiveMatrix

SCHEMA_VERSION = "v1"


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (exit code 2)."""


class RunConfig:
    """Typed view over the sectioned key-value config file."""

    def __init__(self, text: str):
        self.text = text
        self.parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            self.parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if not self.parser.has_option("run", "experiment"):
            raise ConfigError("missing [run] experiment")
        self.experiment = self.parser.get("run", "experiment").strip()
        if self.experiment not in ("reflect", "divcurl", "homog", "euler", "sweep"):
            raise ConfigError(f"unknown experiment '{self.experiment}'")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls(text)

    def hash(self) -> str:
        canonical = "\n".join(
            line.strip() for line in self.text.splitlines() if line.strip()
        )
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def get(self, section, key, cast=str, default=None, required=False):
        if not self.parser.has_option(section, key):
            if required:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        raw = self.parser.get(section, key).strip()
        try:
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value for [{section}] {key}: {raw!r}") from exc

    def floats(self, section, key, default=None, required=False):
        raw = self.get(section, key, str, None, required)
        if raw is None:
            return default
        try:
            return [float(v) for v in raw.split()]
        except ValueError as exc:
            raise ConfigError(f"invalid numbers for [{section}] {key}") from exc

    def box(self, section, key, default=None) -> Box:
        vals = self.floats(section, key, None)
        if vals is None:
            return default
        if len(vals) != 4:
            raise ConfigError(f"[{section}] {key} needs four numbers x0 y0 x1 y1")
        try:
            return Box(*vals)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# config -> domain objects
# ---------------------------------------------------------------------------

def geometry_from_config(cfg: RunConfig, seed: int) -> PorousConfig:
    kind = cfg.get("geometry", "kind", str, "lattice")
    box = cfg.box("geometry", "box", Box(0.0, 0.0, 1.0, 1.0))
    eps0 = cfg.get("geometry", "eps0", float, 0.25)
    if eps0 <= 0.0 or eps0 >= 0.5:
        raise ConfigError("eps0 must lie in (0, 1/2)")
    if kind == "lattice":
        n = cfg.get("geometry", "n", int, required=True)
        epsilon = cfg.get("geometry", "epsilon", float, required=True)
        try:
            return build_lattice(n, epsilon, box, eps0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if kind == "random":
        count = cfg.get("geometry", "count", int, required=True)
        a = cfg.get("geometry", "a", float, required=True)
        dmin = cfg.get("geometry", "dmin", float, required=True)
        try:
            return build_random(count, a, dmin, box, eps0, seed=seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if kind == "twohole":
        a = cfg.get("geometry", "a", float, required=True)
        dmin = cfg.get("geometry", "dmin", float, required=True)
        cy = (box.y0 + box.y1) / 2
        cx = (box.x0 + box.x1) / 2
        centers = np.array([[cx - dmin / 2, cy], [cx + dmin / 2, cy]])
        if a / dmin > eps0:
            raise ConfigError("twohole violates a/d <= eps0")
        return PorousConfig(centers, a, dmin, eps0, box)
    raise ConfigError(f"unknown geometry kind '{kind}'")


def source_from_config(cfg: RunConfig):
    shape = cfg.get("vorticity", "shape", str, "bump")
    center = cfg.floats("vorticity", "center", [0.5, 2.0])
    if len(center) != 2:
        raise ConfigError("[vorticity] center needs two numbers")
    radius = cfg.get("vorticity", "radius", float, 0.3)
    amp = cfg.get("vorticity", "amplitude", float, 1.0)
    if radius <= 0.0:
        raise ConfigError("vorticity radius must be positive")
    if shape == "point":
        return euler.VortexParticles(
            np.array([center]), np.array([amp]), blob=0.0
        )
    if shape == "pair":
        return euler.VortexParticles(
            np.array(
                [
                    [center[0] - radius, center[1]],
                    [center[0] + radius, center[1]],
                ]
            ),
            np.array([amp, amp]),
            blob=cfg.get("euler", "blob", float, radius / 25.0),
        )
    h = cfg.get("vorticity", "grid_h", float, radius / 24.0)
    power = {"bump": 2, "disk": 0}.get(shape)
    if power is None:
        raise ConfigError(f"unknown vorticity shape '{shape}'")
    pad = 2.0 * h
    box = (
        center[0] - radius - pad,
        center[1] - radius - pad,
        center[0] + radius + pad,
        center[1] + radius + pad,
    )
    if power == 0:
        from .fields import disk_indicator

        return rasterize(box, h, disk_indicator(center, radius, amp))
    return rasterize(box, h, radial_bump(center, radius, amp, power))


def world_grid_for(cfg: RunConfig, config: PorousConfig, source) -> ScalarGridField:
    """Grid whose box pads the porous box by the configured factor and covers
    the vorticity support; f is rasterized onto it."""
    pad = cfg.get("solver", "pad_factor", float, 4.0)
    if pad < 3.0:
        raise ConfigError("pad_factor must be >= 3 for the periodic backends")
    h = cfg.get("solver", "grid_h", float, 1.0 / 128.0)
    box = config.kpm_box
    extent = max(box.width, box.height)
    margin = (pad - 1.0) / 2.0 * extent
    world_box = box.inflate(margin)
    if potential._is_particles(source):
        pts = source.positions
        sb = (
            pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()
        ) if pts.size else None
    else:
        sb = source.support_box()
    # the free-space gradient is computed by exact discrete convolution, so f
    # only has to lie inside the grid (k's periodization clearance is checked
    # by the spectral operator itself)
    if sb is not None:
        margin_f = 2.0 * h
        if (
            sb[0] < world_box.x0 + margin_f
            or sb[1] < world_box.y0 + margin_f
            or sb[2] > world_box.x1 - margin_f
            or sb[3] > world_box.y1 - margin_f
        ):
            raise ConfigError("vorticity support outside the padded grid")
    world = make_grid(world_box.as_tuple(), h)
    if not potential._is_particles(source):
        world.values = source.sample_bilinear(world.centers_flat()).reshape(world.shape)
    return world


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def cmd_reflect(cfg: RunConfig, outdir: Path, seed: int) -> dict:
    config = geometry_from_config(cfg, seed)
    source = source_from_config(cfg)
    depth = cfg.get("solver", "reflection_depth", int, 3)
    stream = reflections.run_reflections(source, config, depth)
    reflections.export_dipoles_csv(stream.levels, outdir / "dipoles.csv")
    reflections.export_norms_csv(stream, outdir / "norms.csv")
    save_config(config, outdir / "geometry.txt", seed=seed)
    ratios = {
        str(q): reflections.contraction_report(stream.norms(q))
        for q in (2.0, 4.0)
    }
    results = {"contraction_ratio": ratios, "depth": depth, "n_holes": config.n_holes}
    if config.n_holes == 2:
        results["two_hole_expected_ratio"] = (config.a / config.d) ** 2
    return results


def _knorm_sweep_point(args):
    knorm, g0, kgrid_box, h, M, tol = args
    kfield = rasterize(kgrid_box, h, radial_bump((0.0, 0.0), 0.5, knorm, power=3))
    sol = homogenized.solve_psic_from_grad(g0, kfield, M, tol=tol)
    tilde = homogenized.first_order_from_grad(g0, kfield, M)
    err0 = float(np.sqrt(((sol.grad.values - g0.values) ** 2).sum()) * g0.h)
    errt = float(np.sqrt(((sol.grad.values - tilde.values) ** 2).sum()) * g0.h)
    return knorm, err0, errt, sol.iterations


def cmd_homog(cfg: RunConfig, outdir: Path, seed: int, threads: int = 1) -> dict:
    M = EffectiveMatrix.disk()
    tol = cfg.get("solver", "tol", float, 1e-10)
    values = cfg.floats("sweep", "values", None)
    h = cfg.get("solver", "grid_h", float, 1.0 / 64.0)
    if values:
        world_box = (-2.0, -2.0, 2.0, 2.0)
        f = rasterize(world_box, h, radial_bump((1.2, 0.3), 0.3, 1.0, power=2))
        g0 = potential.grad_psi0_on_grid(f)
        jobs = [(v, g0, world_box, h, M, tol) for v in values]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(_knorm_sweep_point, jobs))
        else:
            rows = [_knorm_sweep_point(j) for j in jobs]
        with open(outdir / "homog_sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["knorm", "err_psi0", "err_tilde", "iterations"])
            for row in rows:
                writer.writerow([repr(row[0]), repr(row[1]), repr(row[2]), row[3]])
        ks = [r[0] for r in rows]
        s0, r0 = analysis.fit_exponent(ks, [r[1] for r in rows])
        s1, r1 = analysis.fit_exponent(ks, [r[2] for r in rows])
        return {
            "slope_err_psi0": s0, "r2_err_psi0": r0,
            "slope_err_tilde": s1, "r2_err_tilde": r1,
            "iterations": [r[3] for r in rows],
        }
    config = geometry_from_config(cfg, seed)
    source = source_from_config(cfg)
    world = world_grid_for(cfg, config, source)
    k = lattice_fraction(config, world)
    sol = homogenized.solve_psic(world, k, M, tol=tol)
    sol.grad.to_csv(outdir / "psic_grad.csv")
    return {
        "iterations": sol.iterations,
        "last_increment": sol.last_increment,
        "increments": sol.increments,
    }


def cmd_divcurl(cfg: RunConfig, outdir: Path, seed: int) -> dict:
    nsides = cfg.floats("sweep", "values", None)
    if nsides is None:
        nsides = [float(cfg.get("geometry", "n", int, required=True))]
    eta = cfg.get("analysis", "eta", float, 0.5)
    probe = cfg.box("analysis", "probe", Box(1.3, 0.0, 2.3, 1.0))
    probe_h = cfg.get("analysis", "probe_h", float, 1.0 / 64.0)
    depth = cfg.get("solver", "reflection_depth", int, 3)
    order = cfg.get("solver", "oracle_order", int, 8)
    pts_per_hole = cfg.get("solver", "oracle_points", int, 64)
    tol = cfg.get("solver", "tol", float, 1e-10)
    epsilon = cfg.get("geometry", "epsilon", float, required=True)
    box = cfg.box("geometry", "box", Box(0.0, 0.0, 1.0, 1.0))
    eps0 = cfg.get("geometry", "eps0", float, 0.25)
    source = source_from_config(cfg)
    M = EffectiveMatrix.disk()
    rows = []
    for nf in nsides:
        n = int(nf)
        config = build_lattice(n, epsilon, box, eps0)
        # one discrete source for every solver: f resampled on the world grid
        world = world_grid_for(cfg, config, source)
        k = lattice_fraction(config, world)
        g0 = potential.grad_psi0_on_grid(world)
        sol = homogenized.solve_psic_from_grad(g0, k, M, tol=tol)
        tilde = homogenized.first_order_from_grad(g0, k, M)
        stream = reflections.run_reflections(world, config, depth)
        osol = None
        if config.n_holes <= oracle.MAX_ORACLE_HOLES:
            osol = oracle.solve_collocation(world, config, order, pts_per_hole)
        report = analysis.gamma_decomposition_report(
            stream, g0, sol.grad, tilde, k, M, probe, probe_h,
            oracle_sol=osol, eta=eta,
        )
        rows.append((n, report))
        (outdir / f"gamma_n{n}.json").write_text(report.to_json())
    with open(outdir / "gamma.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["n_per_side", "grad_gamma1", "gamma2", "total", "f_value", "used_oracle"]
        )
        for n, rep in rows:
            writer.writerow(
                [n, repr(rep.grad_gamma1), repr(rep.gamma2), repr(rep.total),
                 repr(rep.budget.f_value), int(rep.used_oracle)]
            )
    results = {
        "totals": {str(n): rep.total for n, rep in rows},
        "k_inf": float(np.pi * epsilon**2),
    }
    if len(rows) >= 2:
        ns = [n for n, _ in rows]
        totals = [rep.total for _, rep in rows]
        if all(v > 0 for v in totals):
            slope, r2 = analysis.fit_exponent(ns, totals)
            results["slope_total_vs_n"] = slope
            results["r2"] = r2
    return results


def cmd_euler(cfg: RunConfig, outdir: Path, seed: int) -> dict:
    shape = cfg.get("vorticity", "shape", str, "bump")
    dt = cfg.get("euler", "dt", float, required=True)
    t_final = cfg.get("euler", "t_final", float, required=True)
    if dt <= 0 or t_final <= 0:
        raise ConfigError("euler dt and t_final must be positive")
    if shape == "pair":
        return _euler_pair(cfg, outdir, dt, t_final)
    config = geometry_from_config(cfg, seed)
    source = source_from_config(cfg)
    margin = cfg.get("euler", "margin", float, 1.0)
    h_p = cfg.get("euler", "particle_h", float, required=True)
    blob = cfg.get("euler", "blob", float, h_p)
    if potential._is_particles(source):
        particles = source
    else:
        particles = euler.discretize_vorticity(
            source, h_p, blob, kpm_box=config.kpm_box, margin=margin
        )
    # the homogenized closure integrates over supp k only, so the volume
    # fraction lives on a grid of the porous box itself
    kgrid = make_grid(config.kpm_box.as_tuple(), cfg.get("solver", "grid_h", float, 1.0 / 32.0))
    k = lattice_fraction(config, kgrid)
    perf = euler.PerforatedSetting(
        config, cfg.get("solver", "reflection_depth", int, 3), margin=margin
    )
    homog = euler.HomogenizedSetting(
        k, EffectiveMatrix.disk(), margin=margin,
        full_solve=cfg.get("euler", "full_solve", bool, False),
    )
    probe = cfg.box("analysis", "probe", Box(1.5, 1.5, 2.5, 2.5))
    pg = make_grid(probe.as_tuple(), cfg.get("analysis", "probe_h", float, 0.25))
    records = euler.run_comparison(
        particles, perf, homog, t_final, dt, pg.centers_flat()
    )
    euler.export_timeseries_csv(records, outdir / "timeseries.csv")
    final = records[-1]
    return {
        "final_traj_div": final.traj_div_max,
        "final_vel_diff": final.vel_diff_sup,
        "status": [final.status_perforated, final.status_homogenized],
        "n_particles": particles.count,
    }


def _euler_pair(cfg: RunConfig, outdir: Path, dt: float, t_final: float) -> dict:
    center = cfg.floats("vorticity", "center", [0.0, 0.0])
    rho = cfg.get("vorticity", "radius", float, 0.5)
    gamma = cfg.get("vorticity", "amplitude", float, required=True)
    blob = cfg.get("euler", "blob", float, rho / 25.0)
    parts = euler.VortexParticles(
        np.array([[center[0] - rho, center[1]], [center[0] + rho, center[1]]]),
        np.array([gamma, gamma]),
        blob,
    )
    empty = euler.PerforatedSetting(
        PorousConfig(np.zeros((0, 2)), 1e-6, 1.0, 0.25, Box(1e5, 1e5, 1e5 + 1, 1e5 + 1)),
        margin=0.0,
    )
    state = euler.FlowState(0.0, parts)
    prev_ang, period = 0.0, None
    rowsout = [(0.0, 0.0)]
    while state.t < t_final:
        state = euler.step(state, dt, empty)
        d = state.particles.positions[1] - state.particles.positions[0]
        ang = float(np.arctan2(d[1], d[0]))
        while ang < prev_ang - 1e-9:
            ang += 2.0 * np.pi
        rowsout.append((state.t, ang))
        if period is None and ang >= 2.0 * np.pi:
            frac = (2.0 * np.pi - prev_ang) / (ang - prev_ang)
            period = state.t - dt + frac * dt
        prev_ang = ang
    with open(outdir / "pair_angle.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "angle"])
        for t, ang in rowsout:
            writer.writerow([repr(t), repr(ang)])
    analytic = 8.0 * np.pi**2 * rho**2 / gamma
    result = {"period": period, "analytic_period": analytic}
    if period is not None:
        result["period_rel_err"] = abs(period - analytic) / analytic
    return result


def cmd_sweep(cfg: RunConfig, outdir: Path, seed: int) -> dict:
    mode = cfg.get("sweep", "mode", str, "ratio")
    values = cfg.floats("sweep", "values", required=True)
    n = cfg.get("geometry", "n", int, 4)
    eps0 = cfg.get("geometry", "eps0", float, 0.25)
    depth = cfg.get("solver", "reflection_depth", int, 3)
    order = cfg.get("solver", "oracle_order", int, 8)
    pts_per_hole = cfg.get("solver", "oracle_points", int, 64)
    probe_h = cfg.get("analysis", "probe_h", float, None)
    source = source_from_config(cfg)
    rows = []
    for v in values:
        if mode == "ratio":
            box = cfg.box("geometry", "box", Box(0.0, 0.0, 1.0, 1.0))
            config = build_lattice(n, v, box, eps0)
        elif mode == "quadratic":
            # a held proportional to d^2: shrink the box at fixed hole count
            base = cfg.box("geometry", "box", Box(0.0, 0.0, 1.0, 1.0))
            ratio0 = max(values)
            scale = v / ratio0
            side = base.width * scale
            box = Box(base.x0, base.y0, base.x0 + side, base.y0 + side)
            config = build_lattice(n, v, box, eps0)
        else:
            raise ConfigError(f"unknown sweep mode '{mode}'")
        stream = reflections.run_reflections(source, config, depth)
        osol = oracle.solve_collocation(source, config, order, pts_per_hole)
        region = config.kpm_box.inflate(0.25 * config.kpm_box.width)
        h = probe_h if probe_h is not None else config.a / 4.0
        err = analysis.reflection_vs_oracle_h1(stream, osol, region, h)
        rows.append((v, err, osol.residual))
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["aspect", "h1_error", "oracle_residual"])
        for v, err, res in rows:
            writer.writerow([repr(v), repr(err), repr(res)])
    slope, r2 = analysis.fit_exponent([r[0] for r in rows], [r[1] for r in rows])
    return {
        "mode": mode,
        "errors": {str(v): e for v, e, _ in rows},
        "slope": slope,
        "r2": r2,
        "decreasing": all(a[1] < b[1] for a, b in zip(rows, rows[1:])),
    }


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_EXPERIMENTS = {
    "reflect": cmd_reflect,
    "divcurl": cmd_divcurl,
    "homog": cmd_homog,
    "euler": cmd_euler,
    "sweep": cmd_sweep,
}


def run(cfg: RunConfig, outdir: Path, seed: int = 0, threads: int = 1) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    fn = _EXPERIMENTS[cfg.experiment]
    if cfg.experiment == "homog":
        results = fn(cfg, outdir, seed, threads)
    else:
        results = fn(cfg, outdir, seed)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config_hash": cfg.hash(),
        "seed": seed,
        "tolerances": {
            "solver_tol": cfg.get("solver", "tol", float, 1e-10),
            "oracle_order": cfg.get("solver", "oracle_order", int, 8),
            "reflection_depth": cfg.get("solver", "reflection_depth", int, 3),
            "eta": cfg.get("analysis", "eta", float, 0.5),
        },
        "results": results,
    }
    (outdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="porousflow", description="perforated-domain flow experiments"
    )
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    outdir = Path(args.out)
    try:
        cfg = RunConfig.from_file(args.config)
        run(cfg, outdir, seed=args.seed, threads=max(args.threads, 1))
    except ConfigError as exc:
        _write_error(outdir, "config", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numeric/runtime failure
        _write_error(outdir, "runtime", exc)
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


def _write_error(outdir: Path, kind: str, exc: Exception) -> None:
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "error.json").write_text(
            json.dumps(
                {"schema_version": SCHEMA_VERSION, "error_kind": kind,
                 "error_type": type(exc).__name__, "message": str(exc)},
                sort_keys=True,
            )
        )
    except OSError:
        pass


if __name__ == "__main__":
    raise SystemExit(main())
