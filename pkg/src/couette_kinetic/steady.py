"""Steady Couette solution: G1, the split remainder G_R and the composed F_st.

G1 solves v_y d_y G1 + L G1 = -v_x v_y sqrt(mu) with zero inflow.  The
remainder r = sqrt(mu) G_R is carried as r = R1 + sqrt(mu) R2 where R1 is
an unweighted part driven by the sources and the large-velocity piece of
Kcal, and R2 lives in the sqrt(mu) frame with diffuse walls.  Both use the
sheared transport v_y d_y - alpha v_y d_{v_x}.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionOperators
from .fields import ABSOLUTE, CAFLISCH_RAW, PERTURBATION, Field, unwrap
from .grid import SpatialGrid
from .transport import BoundaryData, ShearShift, _etd_weights, transport_inverse

log = logging.getLogger(__name__)

DEFAULT_EPSILONS = (1e-1, 1e-2, 1e-3, 1e-8)


class SolverError(RuntimeError):
    """Raised when an iteration fails; ``stage`` names the loop that failed."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class StabilityError(ValueError):
    pass


def check_stability(ops: CollisionOperators, q: int, alpha: float, epsilon: float = 0.0) -> float:
    """Smallest nu0 + eps + 2 q alpha v_x v_y / (1 + |v|^2) over the grid.

    Raises StabilityError if it drops below nu0 / 2.
    """
    g = ops.grid
    val = ops.nu0 + epsilon + 2.0 * q * alpha * g.vx * g.vy / (1.0 + g.speed2)
    low = float(val.min())
    if low < 0.5 * ops.nu0:
        raise StabilityError(
            f"weighted damping {low:.3g} < nu0/2 = {0.5 * ops.nu0:.3g} for q={q}, alpha={alpha}")
    return low


def _rel_change(new: np.ndarray, old: np.ndarray, w: np.ndarray) -> float:
    top = float(np.max(np.abs(w * (new - old))))
    scale = float(np.max(np.abs(w * new)))
    return top / scale if scale > 0 else top


def d_vx(values: np.ndarray, ops: CollisionOperators) -> np.ndarray:
    """Flux-form difference in v_x with zero flux through the cube faces.

    Sums to zero along every v_x line, so v_y d_{v_x} of anything carries no
    mass.
    """
    g = ops.grid
    cube = g.as_cube(values)
    faces = 0.5 * (cube[..., 1:, :, :] + cube[..., :-1, :, :])
    out = np.zeros_like(cube)
    out[..., :-1, :, :] += faces
    out[..., 1:, :, :] -= faces
    return out.reshape(values.shape) / g.h


def make_odd_in_vx(values: np.ndarray, ops: CollisionOperators) -> np.ndarray:
    flip = ops.grid.flip_index(0)
    return 0.5 * (values - values[..., flip])


class _Divergence:
    def __init__(self, stage: str, patience: int = 5):
        self.stage, self.patience = stage, patience
        self.prev = np.inf
        self.count = 0

    def update(self, value: float):
        if not np.isfinite(value):
            raise SolverError(self.stage, "non-finite update")
        self.count = self.count + 1 if value > self.prev else 0
        self.prev = value
        if self.count >= self.patience:
            raise SolverError(self.stage, f"update grew {self.patience} times in a row (last {value:.3e})")


# G1 ---------------------------------------------------------------------

@dataclass
class G1Solution:
    values: np.ndarray  # (n_points, n_v), sqrt(mu) frame
    sgrid: SpatialGrid | None
    epsilons: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    updates: list[float] = field(default_factory=list)

    @property
    def field(self) -> Field:
        return Field(self.values, PERTURBATION)


def g1_source(ops: CollisionOperators) -> np.ndarray:
    g = ops.grid
    return -g.vx * g.vy * ops.tables.sqrt_mu


def solve_G1(ops: CollisionOperators, sgrid: SpatialGrid | None, *,
             epsilons=DEFAULT_EPSILONS, sigma_steps: int = 4, tol: float = 1e-10,
             max_iter: int = 2000, sigma: float | None = None,
             extrapolate: bool = False) -> G1Solution:
    """Picard iteration G <- T^{-1}(sigma K G + source) with damping nu0 + eps.

    sigma ramps through k/sigma_steps and eps follows ``epsilons``, each stage
    warm-started from the last.  ``sigma`` fixes the coupling instead (0 gives
    the pure transport problem).  With ``sgrid=None`` the spatially
    homogeneous problem (nu0 + eps) G = sigma K G + source is solved.
    ``extrapolate`` replaces the result by the linear-in-eps extrapolation to
    eps = 0 from the last two stages.
    """
    src = g1_source(ops)
    w = ops.tables.w_q
    N = ops.n_v
    shape = (N,) if sgrid is None else (sgrid.n_points, N)
    source = np.broadcast_to(src, shape).copy()
    zero_in = BoundaryData.zeros(N)
    sigmas = [float(sigma)] if sigma is not None else [k / sigma_steps for k in range(1, sigma_steps + 1)]
    G = np.zeros(shape)
    sol = G1Solution(G, sgrid)
    prev_final = None
    for eps in epsilons:
        for sg in sigmas:
            div = _Divergence(f"G1 eps={eps:g} sigma={sg:g}")
            for it in range(1, max_iter + 1):
                rhs = source + (sg * ops.apply_K(G) if sg != 0.0 else 0.0)
                if sgrid is None:
                    G_new = rhs / (ops.nu0 + eps)
                else:
                    G_new = transport_inverse(rhs, ops.nu0 + eps, zero_in, ops.grid, sgrid)
                G_new = make_odd_in_vx(G_new, ops)
                upd = _rel_change(G_new, G, w)
                G = G_new
                div.update(upd)
                if upd <= tol or sg == 0.0:
                    break
            else:
                raise SolverError(f"G1 eps={eps:g} sigma={sg:g}", f"no convergence in {max_iter} iterations")
            sol.iterations.append(it)
            sol.updates.append(upd)
        if extrapolate and prev_final is not None:
            e0, G0 = prev_final
            prev_final = (eps, G.copy())
            G_out = (e0 * G - eps * G0) / (e0 - eps)
        else:
            prev_final = (eps, G.copy())
            G_out = G
        sol.epsilons.append(eps)
    sol.values = G_out
    return sol


def homogeneous_G1_reference(ops: CollisionOperators) -> np.ndarray:
    """-v_x v_y sqrt(mu) / (2 b0): the exact solution without transport."""
    return g1_source(ops) / (2.0 * ops.b0)


# G_R --------------------------------------------------------------------

@dataclass
class RemainderSolution:
    R1: np.ndarray  # absolute-frame part
    R2: np.ndarray  # sqrt(mu)-frame part
    alpha: float
    epsilons: list[float] = field(default_factory=list)
    outer_iterations: list[int] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    mass_corrections: list[float] = field(default_factory=list)
    mass_multiplier: float = 0.0
    final_update: float = np.nan

    @property
    def remainder(self) -> np.ndarray:
        """sqrt(mu) G_R = R1 + sqrt(mu) R2 (absolute frame)."""
        return self.R1 + self._sqrt_mu * self.R2

    _sqrt_mu: np.ndarray = field(default=None, repr=False)

    @property
    def fields(self) -> tuple[Field, Field]:
        return Field(self.R1, CAFLISCH_RAW), Field(self.R2, PERTURBATION)


def wall_maxwellian(ops: CollisionOperators) -> tuple[np.ndarray, np.ndarray]:
    """Discrete diffuse-wall profiles for the bottom and top walls.

    Each is mu on its incoming half-space normalized so that the quadrature
    flux sum_in w |v_y| M_w equals one.
    """
    g = ops.grid
    mu = ops.tables.mu
    cell = g.weight
    up = g.vy > 0
    bottom = np.where(up, mu, 0.0)
    top = np.where(~up, mu, 0.0)
    bottom /= cell * np.sum(np.abs(g.vy) * bottom)
    top /= cell * np.sum(np.abs(g.vy) * top)
    return bottom, top


def outgoing_flux(values_at_wall: np.ndarray, ops: CollisionOperators, wall: int) -> float | np.ndarray:
    """sum over outgoing v of w |v_y| F; wall = -1 (outgoing v_y < 0) or +1."""
    g = ops.grid
    out = g.vy < 0 if wall < 0 else g.vy > 0
    return g.weight * np.sum(np.where(out, np.abs(g.vy), 0.0) * values_at_wall, axis=-1)


def _slab_mass(values: np.ndarray, ops: CollisionOperators, sgrid: SpatialGrid) -> float:
    # midpoint rule over the interior nodes; walls are not interior mass
    return 0.5 * sgrid.dy * ops.grid.weight * float(np.sum(values[1:-1]))


def remainder_sources(g1_abs: np.ndarray, ops: CollisionOperators) -> np.ndarray:
    """v_y d_{v_x}(sqrt(mu) G1) + Q(sqrt(mu) G1, sqrt(mu) G1), absolute frame."""
    return ops.grid.vy * d_vx(g1_abs, ops) + ops.quadratic(g1_abs)


def solve_remainder(g1: G1Solution, ops: CollisionOperators, sgrid: SpatialGrid, alpha: float, *,
                    epsilons=DEFAULT_EPSILONS, tol: float = 1e-10, inner_tol: float | None = None,
                    max_outer: int = 60, max_inner: int = 4000, wall_update: str = "current",
                    source_override: np.ndarray | None = None, chi: np.ndarray | None = None,
                    nonlinear: bool = True) -> RemainderSolution:
    """Outer Picard on the nonlinear source, inner sweeps on the linear split system.

    ``wall_update`` chooses whether the diffuse inflow of R2 uses the flux
    of the current inner iterate (``current``) or of the previous outer
    iterate (``lagged``).  ``source_override`` replaces the R1 source (the
    nonlinear term is then dropped); ``chi`` replaces the cutoff profile.
    The discrete shear creates a little mass each sweep.  A multiplier
    source -lam sqrt(mu) in the R2 equation absorbs it (lam is driven by the
    mass found after each sweep), and that mass is also removed from R2, so
    at convergence the correction vanishes and the wall condition holds.
    """
    if wall_update not in ("current", "lagged"):
        raise ValueError(f"unknown wall_update {wall_update!r}")
    inner_tol = tol if inner_tol is None else inner_tol
    g = ops.grid
    N = ops.n_v
    s = ops.tables.sqrt_mu
    w = ops.tables.w_q
    chi = ops.chiM_mask if chi is None else np.asarray(chi)
    one_minus_chi = 1.0 - chi
    # mu^{-1/2} only where 1 - chi > 0, which is a bounded ball
    inv_s_low = np.where(one_minus_chi > 0, 1.0 / np.maximum(s, 1e-300), 0.0)
    coupling = -0.5 * alpha * s * g.vx * g.vy
    Mb, Mt = wall_maxwellian(ops)
    zero_in = BoundaryData.zeros(N)
    shear = ShearShift(g) if alpha != 0.0 else None
    npnt = sgrid.n_points
    g1_abs = s * g1.values
    if g1_abs.shape != (npnt, N):
        raise ValueError("G1 must be sampled on the same spatial points")
    base = remainder_sources(g1_abs, ops) if source_override is None else np.broadcast_to(
        source_override, (npnt, N)).astype(float)
    nonlinear = nonlinear and source_override is None
    mass_unit = _slab_mass(np.broadcast_to(s * s, (npnt, N)), ops, sgrid)

    R1 = np.zeros((npnt, N))
    R2 = np.zeros((npnt, N))
    sol = RemainderSolution(R1, R2, alpha, _sqrt_mu=s)
    lam = 0.0

    def inflow(R1_, R2_):
        r = R1_ + s * R2_
        fb = outgoing_flux(r[0], ops, -1)
        ft = outgoing_flux(r[-1], ops, +1)
        return BoundaryData(fb * Mb / s, ft * Mt / s)

    for eps in epsilons:
        damp = ops.nu0 + eps
        outer_div = _Divergence(f"G_R outer eps={eps:g}")
        for outer in range(1, max_outer + 1):
            r_old = R1 + s * R2
            src1 = base + (alpha * ops.quadratic(2.0 * g1_abs + alpha * r_old, r_old) if nonlinear else 0.0)
            lagged_in = inflow(R1, R2)
            inner_div = _Divergence(f"G_R inner eps={eps:g}", patience=25)
            for inner in range(1, max_inner + 1):
                kc = ops.apply_Kcal(R1)
                rhs1 = chi * kc + coupling * R2 + src1
                R1_new = transport_inverse(rhs1, damp, zero_in, g, sgrid, alpha, shear)
                bc = inflow(R1_new, R2) if wall_update == "current" else lagged_in
                rhs2 = ops.apply_K(R2) + one_minus_chi * inv_s_low * ops.apply_Kcal(R1_new) - lam * s
                R2_new = transport_inverse(rhs2, damp, bc, g, sgrid, alpha, shear)
                c = _slab_mass(R1_new + s * R2_new, ops, sgrid) / mass_unit
                R2_new = R2_new - c * s
                lam += damp * c
                sol.mass_corrections.append(c)
                upd = max(_rel_change(R1_new, R1, w), _rel_change(s * R2_new, s * R2, w))
                R1, R2 = R1_new, R2_new
                inner_div.update(upd)
                if upd <= inner_tol:
                    break
            else:
                raise SolverError(f"G_R inner eps={eps:g}", f"no convergence in {max_inner} sweeps")
            sol.inner_iterations.append(inner)
            out_upd = _rel_change(R1 + s * R2, r_old, w)
            if not nonlinear:
                out_upd = 0.0
            outer_div.update(out_upd)
            if out_upd <= tol:
                break
        else:
            raise SolverError(f"G_R outer eps={eps:g}", f"no convergence in {max_outer} iterations")
        sol.outer_iterations.append(outer)
        sol.epsilons.append(eps)
        sol.final_update = out_upd
    sol.R1, sol.R2 = R1, R2
    sol.mass_multiplier = lam
    return sol


# composition and residual -----------------------------------------------

@dataclass
class SteadyState:
    F: np.ndarray  # absolute density on sgrid.points
    alpha: float
    sgrid: SpatialGrid
    mass: float
    min_value: float
    positive: bool

    @property
    def field(self) -> Field:
        return Field(self.F, ABSOLUTE)


def compose_steady(g1: G1Solution | np.ndarray, remainder: RemainderSolution | np.ndarray | None,
                   alpha: float, ops: CollisionOperators, sgrid: SpatialGrid) -> SteadyState:
    """F = mu + alpha sqrt(mu) G1 + alpha^2 sqrt(mu) G_R.

    ``remainder`` is either a RemainderSolution or sqrt(mu) G_R directly.
    """
    G1 = unwrap(g1.values if isinstance(g1, G1Solution) else g1, PERTURBATION)
    s = ops.tables.sqrt_mu
    F = ops.tables.mu + alpha * s * G1
    if remainder is not None:
        r = remainder.remainder if isinstance(remainder, RemainderSolution) else np.asarray(remainder)
        F = F + alpha * alpha * r
    F = np.broadcast_to(F, (sgrid.n_points, ops.n_v)).copy()
    mass = _slab_mass(F, ops, sgrid)
    low = float(F.min())
    if low < 0:
        log.warning("composed steady state has negative values (min %.3e)", low)
    return SteadyState(F, alpha, sgrid, mass, low, low >= 0)


@dataclass(frozen=True)
class SteadyResidual:
    sup: float
    l2: float
    values: np.ndarray = field(repr=False)


def _residual_field(F: np.ndarray, ops: CollisionOperators, sgrid: SpatialGrid, alpha: float) -> np.ndarray:
    g = ops.grid
    mu = ops.tables.mu
    dev = F - mu
    # collision part without -nu0 dev, plus the shear acting on mu (exact) and on dev (differenced)
    S = ops.relaxation_source(dev) + alpha * g.vy * (-g.vx * mu + d_vx(dev, ops))
    pts = sgrid.points
    avy = np.abs(g.vy)
    up = g.vy > 0
    nu0 = np.full(ops.n_v, ops.nu0)
    res = np.zeros_like(F)
    for j in range(1, pts.size):
        e, a, b = _etd_weights((pts[j] - pts[j - 1]) / avy, nu0)
        phi0 = a + b
        # v_y > 0: from j-1 to j
        r_up = (dev[j] - e * dev[j - 1] - a * S[j - 1] - b * S[j]) / phi0
        # v_y < 0: from j to j-1
        r_dn = (dev[j - 1] - e * dev[j] - a * S[j] - b * S[j - 1]) / phi0
        res[j] = np.where(up, r_up, res[j])
        res[j - 1] = np.where(up, res[j - 1], r_dn)
    return res


def steady_residual(state: SteadyState | np.ndarray, ops: CollisionOperators, sgrid: SpatialGrid,
                    alpha: float | None = None, subtract_floor: bool = True) -> SteadyResidual:
    """Residual of v_y d_y F - alpha v_y d_{v_x} F - Q(F, F) along characteristics.

    Between consecutive points the equation is integrated with the source
    linear in y, so the residual has units of the equation itself.  The
    floor (the same functional at alpha = 0 applied to mu) is subtracted
    field-wise.
    """
    if isinstance(state, SteadyState):
        F, alpha = state.F, state.alpha if alpha is None else alpha
    else:
        F = unwrap(state, ABSOLUTE)
        if alpha is None:
            raise ValueError("alpha is required with a bare array")
    res = _residual_field(F, ops, sgrid, alpha)
    if subtract_floor:
        mu_field = np.broadcast_to(ops.tables.mu, F.shape)
        res = res - _residual_field(mu_field, ops, sgrid, 0.0)
    sup = float(np.max(np.abs(res)))
    l2 = float(np.sqrt(0.5 * sgrid.dy * ops.grid.weight * np.sum(res[1:-1] ** 2)))
    return SteadyResidual(sup, l2, res)


def solve_steady(ops: CollisionOperators, sgrid: SpatialGrid, alpha: float, *,
                 epsilons=DEFAULT_EPSILONS, sigma_steps: int = 4, tol: float = 1e-10,
                 max_iter: int = 2000, max_outer: int = 60, q: int | None = None,
                 wall_update: str = "current"):
    """G1, the remainder and the composed state in one call."""
    if q is not None:
        check_stability(ops, q, alpha)
    g1 = solve_G1(ops, sgrid, epsilons=epsilons, sigma_steps=sigma_steps, tol=tol, max_iter=max_iter)
    rem = solve_remainder(g1, ops, sgrid, alpha, epsilons=epsilons, tol=tol,
                          max_outer=max_outer, wall_update=wall_update)
    state = compose_steady(g1, rem, alpha, ops, sgrid)
    return g1, rem, state
