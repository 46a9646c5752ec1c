"""Moments, wall fluxes, boundary-condition residuals, norms and decay fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import ABSOLUTE, PERTURBATION, unwrap
from .grid import SpatialGrid, VelocityGrid, maxwellian


@dataclass(frozen=True)
class Moments:
    density: np.ndarray
    velocity: np.ndarray  # (..., 3)
    temperature: np.ndarray
    shear_stress: np.ndarray  # P_xy


def moments(F, vgrid: VelocityGrid) -> Moments:
    """Density, bulk velocity, temperature and P_xy of an absolute density."""
    F = unwrap(F, ABSOLUTE)
    w = vgrid.weight
    v = vgrid.nodes
    rho = w * F.sum(axis=-1)
    mom = w * F @ v
    u = mom / rho[..., None]
    energy = w * F @ vgrid.speed2
    T = (energy / rho - np.einsum("...i,...i->...", u, u)) / 3.0
    pxy = w * F @ (v[:, 0] * v[:, 1]) - rho * u[..., 0] * u[..., 1]
    return Moments(rho, u, T, pxy)


def wall_flux(F_wall, vgrid: VelocityGrid, wall: int) -> float:
    """Outgoing flux sum w |v_y| F over v_y < 0 at y = -1 or v_y > 0 at y = +1."""
    F_wall = unwrap(F_wall, ABSOLUTE)
    out = vgrid.vy < 0 if wall < 0 else vgrid.vy > 0
    return float(vgrid.weight * np.sum(np.abs(vgrid.vy[out]) * F_wall[..., out]))


def wall_profile(vgrid: VelocityGrid, wall: int, normalization: str = "discrete") -> np.ndarray:
    """Incoming wall Maxwellian, zero on outgoing velocities.

    ``discrete`` scales mu so the quadrature flux is one; ``continuum`` uses
    sqrt(2 pi) mu, whose exact flux is one.
    """
    inc = vgrid.vy > 0 if wall < 0 else vgrid.vy < 0
    mu = maxwellian(vgrid.speed2)
    prof = np.where(inc, mu, 0.0)
    if normalization == "discrete":
        return prof / (vgrid.weight * np.sum(np.abs(vgrid.vy) * prof))
    if normalization == "continuum":
        return math.sqrt(2.0 * math.pi) * prof
    raise ValueError(f"unknown normalization {normalization!r}")


def bc_residual(F_wall, vgrid: VelocityGrid, wall: int, normalization: str = "discrete") -> float:
    """sup over incoming v of |F(wall, v) - M_w(v) * outgoing flux|."""
    F_wall = unwrap(F_wall, ABSOLUTE)
    inc = vgrid.vy > 0 if wall < 0 else vgrid.vy < 0
    target = wall_profile(vgrid, wall, normalization) * wall_flux(F_wall, vgrid, wall)
    return float(np.max(np.abs(F_wall[..., inc] - target[inc])))


def projection_defect(f_wall, vgrid: VelocityGrid, sqrt_mu: np.ndarray, wall: int) -> float:
    """sup |f - P_gamma f| over incoming v for a sqrt(mu)-frame trace."""
    f_wall = unwrap(f_wall, PERTURBATION)
    return bc_residual(sqrt_mu * f_wall, vgrid, wall, "discrete")


@dataclass(frozen=True)
class NormReport:
    weighted_sup: float
    l2: float
    trace_out: float
    trace_in: float
    macro: float


def trace_norms(f_points: np.ndarray, vgrid: VelocityGrid) -> tuple[float, float]:
    """|f|_{2,+}^2 and |f|_{2,-}^2 summed over both walls (outgoing, incoming)."""
    w = vgrid.weight * np.abs(vgrid.vy)
    bottom, top = f_points[0], f_points[-1]
    up = vgrid.vy > 0
    out = float(np.sum(w[~up] * bottom[~up] ** 2) + np.sum(w[up] * top[up] ** 2))
    inc = float(np.sum(w[up] * bottom[up] ** 2) + np.sum(w[~up] * top[~up] ** 2))
    return out, inc


def trace_total_full_grid(f_points: np.ndarray, vgrid: VelocityGrid) -> float:
    """|f|_{2,+}^2 + |f|_{2,-}^2 from full-grid sums at both walls."""
    w = vgrid.weight * np.abs(vgrid.vy)
    return float(np.sum(w * f_points[0] ** 2) + np.sum(w * f_points[-1] ** 2))


def norm_report(f_points, vgrid: VelocityGrid, sgrid: SpatialGrid, w_q: np.ndarray,
                basis=None) -> NormReport:
    """Norms of a sqrt(mu)-frame field sampled on the spatial points."""
    f = unwrap(f_points, PERTURBATION)
    sup = float(np.max(np.abs(w_q * f)))
    interior = f[1:-1]
    l2 = float(np.sqrt(sgrid.dy * vgrid.weight * np.sum(interior ** 2)))
    out, inc = trace_norms(f, vgrid)
    macro = float("nan")
    if basis is not None:
        proj = basis.reconstruct(basis.project(interior))
        macro = float(np.sqrt(sgrid.dy * vgrid.weight * np.sum(proj ** 2)))
    return NormReport(sup, l2, math.sqrt(out), math.sqrt(inc), macro)


@dataclass(frozen=True)
class SymmetryReport:
    vx_oddness: float
    bc_bottom: float
    bc_top: float
    projection_bottom: float
    projection_top: float


def symmetry_report(G_points, F_points, vgrid: VelocityGrid, sqrt_mu: np.ndarray) -> SymmetryReport:
    """Oddness of a sqrt(mu)-frame field in v_x and wall defects of a density."""
    G = unwrap(G_points, PERTURBATION)
    F = unwrap(F_points, ABSOLUTE)
    flip = vgrid.flip_index(0)
    scale = max(float(np.max(np.abs(G))), 1e-300)
    odd = float(np.max(np.abs(G + G[..., flip]))) / scale
    f = (F - maxwellian(vgrid.speed2)) / sqrt_mu
    return SymmetryReport(
        odd,
        bc_residual(F[0], vgrid, -1), bc_residual(F[-1], vgrid, +1),
        projection_defect(f[0], vgrid, sqrt_mu, -1), projection_defect(f[-1], vgrid, sqrt_mu, +1))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    residual: float
    t_start: float
    t_end: float
    n_points: int


def decay_rate_fit(times, norms, min_points: int = 10) -> DecayFit:
    """Least-squares fit log(norm) = intercept - rate * t.

    ``residual`` is the RMS of the log misfit, i.e. roughly the relative
    deviation from the fitted exponential.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    keep = y > 0
    t, y = t[keep], y[keep]
    if t.size == 0:
        raise ValueError("empty fit window")
    if t.size < min_points:
        raise ValueError(f"fit window has {t.size} points, need {min_points}")
    logy = np.log(y)
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (intercept + slope * t)
    return DecayFit(float(-slope), float(intercept), float(np.sqrt(np.mean(resid ** 2))),
                    float(t[0]), float(t[-1]), int(t.size))
