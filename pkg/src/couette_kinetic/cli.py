"""Command-line driver: flat key = value configs, runs, CSV/JSON/binary outputs."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__

log = logging.getLogger("couette_kinetic")

# dense eigenvalue check of L is cheap up to about this many velocity nodes
MAX_GAP_CHECK_NODES = 4096


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    alpha: float = 0.01
    q: int = 4
    M: float | str = "auto"
    n_v: int = 8
    v_max: float = 4.5
    n_y: int = 16
    b_amp: float = 1.0 / (2.0 * math.pi)
    n_omega: int = 256
    epsilon_schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-8)
    sigma_steps: int = 4
    tol: float = 1e-10
    max_iter: int = 2000
    max_outer: int = 60
    dt: float | str = "auto"
    t_end: float = 10.0
    record_every: int = 1
    scheme: str = "direct"
    seed: int = 0
    output_dir: str = "out"
    interpolation: str = "ratio"
    perturbation: float = 1e-3
    T0: float = 10.0
    kmax: int = 40
    n_samples: int = 100000
    override_stability: bool = False
    # resolved values
    M_capped: bool = False

    @property
    def n_theta(self) -> int:
        return int(round(math.sqrt(self.n_omega)))

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["epsilon_schedule"] = list(self.epsilon_schedule)
        return d


_RESOLVED = {"M_capped"}
_KEYS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name not in _RESOLVED}


def _convert(name: str, text: str):
    text = text.strip()
    if name in ("M", "dt") and text.lower() == "auto":
        return "auto"
    if name == "epsilon_schedule":
        vals = tuple(float(x) for x in text.split(",") if x.strip())
        if not vals:
            raise ConfigError("epsilon_schedule must list at least one value")
        return vals
    if name == "override_stability":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"override_stability: not a boolean: {text!r}")
    if name in ("scheme", "output_dir", "interpolation"):
        return text.strip("\"'")
    if name in ("q", "n_v", "n_y", "n_omega", "sigma_steps", "max_iter", "max_outer",
                "record_every", "seed", "kmax", "n_samples"):
        return int(text)
    return float(text)


def _read_pairs(path: Path) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


def build_config(values: dict) -> RunConfig:
    """Validate raw values (strings or typed) and resolve automatic fields."""
    kwargs = {}
    for key, value in values.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            kwargs[key] = _convert(key, value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return build_config(_read_pairs(path))


def _validate(cfg: RunConfig) -> None:
    from .collision import auto_cutoff

    if cfg.alpha < 0:
        raise ConfigError("alpha must be >= 0")
    if cfg.q < 0:
        raise ConfigError("q must be >= 0")
    for name in ("tol", "v_max", "b_amp", "t_end", "T0"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")
    if any(e <= 0 for e in cfg.epsilon_schedule):
        raise ConfigError("epsilon_schedule entries must be positive")
    if cfg.scheme not in ("direct", "caflisch"):
        raise ConfigError("scheme must be direct or caflisch")
    if cfg.interpolation not in ("ratio", "plain"):
        raise ConfigError("interpolation must be ratio or plain")
    nt = cfg.n_theta
    if nt * nt != cfg.n_omega or nt % 2:
        raise ConfigError("n_omega must be the square of an even integer (n_theta = n_phi)")
    if cfg.dt != "auto" and not cfg.dt > 0:
        raise ConfigError("dt must be positive or 'auto'")
    if cfg.M == "auto":
        cfg.M, cfg.M_capped = auto_cutoff(cfg.q, cfg.v_max)
    elif not 0 < cfg.M < cfg.v_max:
        raise ConfigError("M must lie in (0, v_max)")
    # Maxwell molecules: nu0 = 2 pi b_amp times the unit mass of mu
    nu0 = 2.0 * math.pi * cfg.b_amp
    if 2.0 * cfg.q * cfg.alpha > 0.5 * nu0 and not cfg.override_stability:
        raise ConfigError(
            f"stability check failed: 2 q alpha = {2 * cfg.q * cfg.alpha:g} > nu0/2 = {0.5 * nu0:g}")


# shared setup -------------------------------------------------------------

def _setup(cfg: RunConfig, need_kernel: bool = True):
    from .collision import CollisionKernelSpec, assemble_operators
    from .grid import build_spatial_grid, build_velocity_grid, eval_reference

    vgrid = build_velocity_grid(cfg.n_v, cfg.v_max)
    tables = eval_reference(vgrid, cfg.q)
    sgrid = build_spatial_grid(cfg.n_y)
    ops = None
    if need_kernel:
        spec = CollisionKernelSpec(b_amp=cfg.b_amp, n_theta=cfg.n_theta, n_phi=cfg.n_theta,
                                   interpolation=cfg.interpolation)
        ops = assemble_operators(vgrid, tables, spec, cfg.M)
        if vgrid.size <= MAX_GAP_CHECK_NODES:
            from .collision import spectral_gap

            gap = spectral_gap(ops)
            if gap < -1e-8:
                raise click.ClickException(
                    f"linearized operator has a negative eigenvalue ({gap:.3g}) on this grid "
                    f"(h = {vgrid.h:.3g}); use more velocity nodes or a smaller v_max")
    return vgrid, tables, sgrid, ops


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _write_meta(out: Path, cfg: RunConfig, command: str, started: float, extra: dict,
                vgrid=None) -> None:
    meta = {
        "command": command,
        "config": cfg.echo(),
        "versions": {"couette_kinetic": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "grid_hash": vgrid.content_hash() if vgrid is not None else None,
        "wall_clock_s": time.time() - started,
        "results": extra,
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, default=float))


def _steady_pipeline(cfg: RunConfig, vgrid, tables, sgrid, ops):
    from .steady import check_stability, compose_steady, solve_G1, solve_remainder

    if not cfg.override_stability:
        check_stability(ops, cfg.q, cfg.alpha)
    g1 = solve_G1(ops, sgrid, epsilons=cfg.epsilon_schedule, sigma_steps=cfg.sigma_steps,
                  tol=cfg.tol, max_iter=cfg.max_iter)
    rem = solve_remainder(g1, ops, sgrid, cfg.alpha, epsilons=cfg.epsilon_schedule, tol=cfg.tol,
                          max_outer=cfg.max_outer, max_inner=cfg.max_iter)
    state = compose_steady(g1, rem, cfg.alpha, ops, sgrid)
    return g1, rem, state


# commands -------------------------------------------------------------------

_OVERRIDES = [
    click.option("--alpha", type=float), click.option("--q", "q", type=int),
    click.option("--M", "M", type=str), click.option("--n-v", "n_v", type=int),
    click.option("--v-max", "v_max", type=float), click.option("--n-y", "n_y", type=int),
    click.option("--b-amp", "b_amp", type=float), click.option("--n-omega", "n_omega", type=int),
    click.option("--epsilon-schedule", "epsilon_schedule", type=str),
    click.option("--sigma-steps", "sigma_steps", type=int), click.option("--tol", type=float),
    click.option("--max-iter", "max_iter", type=int), click.option("--max-outer", "max_outer", type=int),
    click.option("--dt", type=str), click.option("--t-end", "t_end", type=float),
    click.option("--record-every", "record_every", type=int),
    click.option("--scheme", type=click.Choice(["direct", "caflisch"])),
    click.option("--seed", type=int), click.option("--output-dir", "output_dir", type=str),
    click.option("--interpolation", type=click.Choice(["ratio", "plain"])),
    click.option("--perturbation", type=float),
    click.option("--T0", "T0", type=float), click.option("--kmax", type=int),
    click.option("--n-samples", "n_samples", type=int),
    click.option("--override-stability", "override_stability", is_flag=True, default=None),
]


def _with_overrides(fn):
    for opt in reversed(_OVERRIDES):
        fn = opt(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))(fn)
    return fn


def _load(config_path, overrides: dict) -> RunConfig:
    values = _read_pairs(Path(config_path)) if config_path else {}
    for key, val in overrides.items():
        if val is not None:
            values[key] = val if not isinstance(val, bool) else str(val)
    return build_config(values)


def _run(command: str, config_path, overrides, body):
    started = time.time()
    try:
        cfg = _load(config_path, overrides)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        extra, vgrid = body(cfg, out)
    except click.ClickException:
        raise
    except Exception as exc:  # report any pipeline failure with its stage
        stage = getattr(exc, "stage", command)
        raise click.ClickException(f"{command} failed in {stage}: {exc}")
    _write_meta(out, cfg, command, started, extra, vgrid)


@click.group()
@click.option("--threads", type=int, default=None, help="Upper bound on worker threads.")
@click.option("-v", "--verbose", is_flag=True)
def main(threads, verbose):
    """Discrete-velocity solver for the steady and relaxing plane Couette problem."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


@main.command()
@_with_overrides
def steady(config_path, **overrides):
    """Solve G1 and the remainder, compose F_st and write field dumps."""

    def body(cfg, out):
        from .diagnostics import bc_residual
        from .fields import CAFLISCH_RAW, PERTURBATION
        from .steady import steady_residual
        from .storage import write_field

        vgrid, tables, sgrid, ops = _setup(cfg)
        g1, rem, state = _steady_pipeline(cfg, vgrid, tables, sgrid, ops)
        res = steady_residual(state, ops, sgrid)
        h = vgrid.content_hash()
        write_field(out / "g1.bin", g1.values, h, PERTURBATION)
        write_field(out / "gr1.bin", rem.R1, h, CAFLISCH_RAW)
        write_field(out / "gr2.bin", rem.R2, h, PERTURBATION)
        f = (state.F - tables.mu) / tables.sqrt_mu
        proj = ops.basis.project(f)
        _write_csv(out / "profile.csv", ["y", "a", "b1", "b2", "b3", "c"],
                   ([y, proj.a[k], *proj.b[k], proj.c[k]] for k, y in enumerate(sgrid.points)))
        meta = {
            "alpha": cfg.alpha, "M": cfg.M, "M_capped": cfg.M_capped, "nu0": ops.nu0, "b0": ops.b0,
            "residual_sup": res.sup, "residual_l2": res.l2,
            "bc_residual_bottom": bc_residual(state.F[0], vgrid, -1),
            "bc_residual_top": bc_residual(state.F[-1], vgrid, +1),
            "min_F_st": state.min_value, "mass": state.mass,
            "g1_iterations": g1.iterations, "remainder_outer_iterations": rem.outer_iterations,
            "kernel_raw_asymmetry": ops.raw_asymmetry, "clip_fraction": ops.clip_fraction,
        }
        (out / "steady_meta.json").write_text(json.dumps(meta, indent=2, default=float))
        return meta, vgrid

    _run("steady", config_path, overrides, body)


@main.command()
@_with_overrides
def unsteady(config_path, **overrides):
    """Relax F_st + perturbation * v_x v_y mu back to F_st and fit the decay rate."""

    def body(cfg, out):
        from .unsteady import max_time_step, run_to_steady

        vgrid, tables, sgrid, ops = _setup(cfg)
        _, _, state = _steady_pipeline(cfg, vgrid, tables, sgrid, ops)
        F_st = state.F[1:-1]
        F0 = F_st + cfg.perturbation * vgrid.vx * vgrid.vy * tables.mu
        dt = 0.9 * max_time_step(ops, sgrid, cfg.alpha) if cfg.dt == "auto" else float(cfg.dt)
        result = run_to_steady(F0, F_st, ops, sgrid, cfg.alpha, dt, cfg.t_end,
                               record_every=cfg.record_every, scheme=cfg.scheme)
        rec = result.record
        _write_csv(out / "decay.csv", ["t", "sup_norm", "l2_norm", "mass", "min_F"],
                   zip(rec.times, rec.sup_norm, rec.l2_norm, rec.mass, rec.min_value))
        fit = result.fit
        fit_json = {"lambda0": None, "window": None, "residual": None} if fit is None else {
            "lambda0": fit.rate, "window": [fit.t_start, fit.t_end], "residual": fit.residual,
            "n_points": fit.n_points}
        (out / "decay_fit.json").write_text(json.dumps(fit_json, indent=2))
        extra = {"dt": dt, "steps": result.steps, "mass_defect_removed": result.mass_defect_removed,
                 "mass_drift": float(np.ptp(rec.mass)), "min_F": float(np.min(rec.min_value)), **fit_json}
        return extra, vgrid

    _run("unsteady", config_path, overrides, body)


@main.command("verify-kernel")
@_with_overrides
def verify_kernel(config_path, **overrides):
    """Numerical checks of the assembled collision operator."""

    def body(cfg, out):
        from .collision import apply_Q, self_adjointness_defect, spectral_gap

        vgrid, tables, sgrid, ops = _setup(cfg)
        rng = np.random.default_rng(cfg.seed)
        s = tables.sqrt_mu
        f = vgrid.vx * vgrid.vy * s
        eig = float(np.linalg.norm(ops.apply_L(f) - 2 * ops.b0 * f) / np.linalg.norm(2 * ops.b0 * f))
        mu = tables.mu
        qmm = float(np.sqrt(vgrid.weight * np.sum(apply_Q(ops, mu, mu) ** 2)) /
                    np.sqrt(vgrid.weight * np.sum(mu ** 2)))
        K = ops.K_matrix
        sym = float(np.max(np.abs(K - K.T)) / np.max(np.abs(K)))
        g = rng.uniform(-1, 1, (4, vgrid.size)) * mu
        src = ops.relaxation_source(g) - ops.nu0 * g
        phis = np.stack([np.ones(vgrid.size), vgrid.vx, vgrid.vy, vgrid.vz, vgrid.speed2])
        cons = float(np.max(np.abs(vgrid.weight * src @ phis.T)))
        spread = float(np.ptp(ops.nu_per_node) / ops.nu0)
        nu_expected = 2 * math.pi * cfg.b_amp * float(np.sum(vgrid.quad_weights * mu))
        b0_expected = 0.5 * math.pi * cfg.b_amp
        adj = self_adjointness_defect(ops, rng)
        gap = spectral_gap(ops)
        rows = [
            ("nu0_spread", spread, ops.spec.nu_rel_tol, spread <= ops.spec.nu_rel_tol),
            ("nu0_vs_mass_of_mu", abs(ops.nu0 - nu_expected), 1e-12, abs(ops.nu0 - nu_expected) <= 1e-12),
            ("nu0_vs_2pi_b_amp", abs(ops.nu0 - 2 * math.pi * cfg.b_amp), 1e-3,
             abs(ops.nu0 - 2 * math.pi * cfg.b_amp) <= 1e-3),
            ("b0_vs_pi_b_amp_over_2", abs(ops.b0 - b0_expected), 1e-12, abs(ops.b0 - b0_expected) <= 1e-12),
            ("shear_eigen_error", eig, 5e-2, eig <= 5e-2),
            ("Q_mu_mu_relative", qmm, 1e-3, qmm <= 1e-3),
            ("K_asymmetry", sym, 1e-10, sym <= 1e-10),
            ("self_adjoint_defect", adj, 1e-10, adj <= 1e-10),
            ("spectral_gap", gap, 0.0, gap > 0),
            ("solver_collision_moment_defect", cons, 1e-12, cons <= 1e-12),
            ("clip_fraction", ops.clip_fraction, ops.spec.max_clip_fraction,
             ops.clip_fraction <= ops.spec.max_clip_fraction),
            ("raw_kernel_asymmetry", ops.raw_asymmetry, float("nan"), True),
        ]
        _write_csv(out / "kernel_checks.csv", ["check_name", "value", "bound", "pass"],
                   ([n, float(v), float(b), bool(p)] for n, v, b, p in rows))
        return {n: float(v) for n, v, _, _ in rows}, vgrid

    _run("verify-kernel", config_path, overrides, body)


@main.command()
@_with_overrides
def cycles(config_path, **overrides):
    """Monte Carlo survival of backward bounce cycles."""

    def body(cfg, out):
        from .transport import survival_curve

        rng = np.random.default_rng(cfg.seed)
        k, surv, err = survival_curve(cfg.T0, cfg.kmax, cfg.n_samples, rng)
        _write_csv(out / "survival.csv", ["T0", "k", "n_samples", "survival", "stderr"],
                   ([cfg.T0, int(kk), cfg.n_samples, float(s), float(e)] for kk, s, e in zip(k, surv, err)))
        return {"survival_at_kmax": float(surv[-1])}, None

    _run("cycles", config_path, overrides, body)


@main.command()
@click.argument("dump", type=click.Path(exists=True, dir_okay=False))
@_with_overrides
def report(dump, config_path, **overrides):
    """Norm and moment tables of a field dump (grid taken from the config)."""

    def body(cfg, out):
        from .collision import MacroBasis
        from .diagnostics import moments, norm_report
        from .fields import ABSOLUTE, REPRESENTATIONS
        from .storage import read_field

        vgrid, tables, sgrid, _ = _setup(cfg, need_kernel=False)
        values, ghash, tag = read_field(Path(dump))
        if ghash != vgrid.content_hash():
            raise click.ClickException(f"dump grid hash {ghash} does not match the configured grid")
        rep = next((r for r in REPRESENTATIONS if r.startswith(tag)), None)
        if rep is None:
            raise click.ClickException(f"unknown representation tag {tag!r}")
        values = np.atleast_2d(values)
        if rep == ABSOLUTE:
            F = values
            f = (values - tables.mu) / tables.sqrt_mu
        else:
            # sqrt(mu)-frame view of raw parts and perturbations alike
            f = values / tables.sqrt_mu if rep == "caflisch_raw" else values
            F = tables.mu + tables.sqrt_mu * f
        basis = MacroBasis(vgrid, tables)
        nr = norm_report(f, vgrid, sgrid, tables.w_q, basis) if values.shape[0] == sgrid.n_points else None
        rows = [("weighted_sup", float(np.max(np.abs(tables.w_q * f))))]
        if nr is not None:
            rows += [("l2", nr.l2), ("trace_out", nr.trace_out), ("trace_in", nr.trace_in),
                     ("macro_l2", nr.macro)]
        _write_csv(out / "report_norms.csv", ["norm", "value"], rows)
        m = moments(F, vgrid)
        proj = basis.project(f)
        ys = sgrid.points if values.shape[0] == sgrid.n_points else np.arange(values.shape[0])
        _write_csv(out / "report_moments.csv",
                   ["y", "density", "u_x", "u_y", "u_z", "temperature", "P_xy", "a", "b1", "b2", "b3", "c"],
                   ([ys[k], m.density[k], *m.velocity[k], m.temperature[k], m.shear_stress[k],
                     proj.a[k], *proj.b[k], proj.c[k]] for k in range(values.shape[0])))
        return {"representation": rep, "rows": int(values.shape[0])}, vgrid

    _run("report", config_path, overrides, body)


if __name__ == "__main__":
    sys.exit(main())
