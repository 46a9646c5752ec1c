"""Characteristics of v_y d_y - alpha v_y d_{v_x}: exits, bounce cycles, mild-form sweeps.

Along a backward characteristic ending at (t, y, v),
Y(s) = y - (t - s) v_y and V(s) = (v_x + alpha (t - s) v_y, v_y, v_z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .grid import SpatialGrid, VelocityGrid


@dataclass(frozen=True)
class Trajectory:
    t: float
    y: float
    v: tuple[float, float, float]
    alpha: float

    def position(self, s: float) -> float:
        return self.y - (self.t - s) * self.v[1]

    def velocity(self, s: float) -> np.ndarray:
        vx, vy, vz = self.v
        return np.array([vx + self.alpha * (self.t - s) * vy, vy, vz])

    def jacobian(self) -> float:
        """Determinant of (s, v) -> (Y(s), V(s)); equals v_y up to sign convention."""
        return self.v[1]


def backward_exit(y: float, v) -> tuple[float, float]:
    """Backward exit time and wall for the point (y, v).

    A point sitting on a wall whose backward path would leave through that
    same wall at once is treated as the start of a full traversal: the exit
    is the opposite wall after time 2/|v_y|.
    """
    vy = float(v[1])
    if vy == 0.0:
        raise ValueError("grazing velocity v_y = 0 has no backward exit")
    if not -1.0 <= y <= 1.0:
        raise ValueError(f"y={y} outside the slab")
    if vy > 0:
        tb, yb = (y + 1.0) / vy, -1.0
    else:
        tb, yb = (y - 1.0) / vy, 1.0
    if tb == 0.0:
        tb, yb = 2.0 / abs(vy), -yb
    return tb, yb


# steady mild-form sweeps --------------------------------------------------

@dataclass(frozen=True)
class BoundaryData:
    """Incoming wall values: ``bottom`` is used where v_y > 0 at y=-1, ``top`` where v_y < 0 at y=+1."""

    bottom: np.ndarray
    top: np.ndarray

    @classmethod
    def zeros(cls, n_v: int) -> "BoundaryData":
        return cls(np.zeros(n_v), np.zeros(n_v))


def _etd_weights(tau: np.ndarray, d: np.ndarray):
    """e, a, b with G_end = e G_start + a S_start + b S_end for linear S on a path of duration tau."""
    x = d * tau
    e = np.exp(-x)
    em1 = -np.expm1(-x)
    phi0 = tau * np.where(x > 1e-8, em1 / np.where(x > 0, x, 1.0), 1.0 - 0.5 * x)
    # phi1 = int_0^tau e^{-d(tau-s)} s/tau ds; series below a small threshold
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    phi1_big = tau * (xs - em1) / (xs * xs)
    phi1_small = tau * (0.5 - x / 6.0 + x * x / 24.0 - x ** 3 / 120.0)
    phi1 = np.where(small, phi1_small, phi1_big)
    return e, phi0 - phi1, phi1


class ShearShift:
    """Linear interpolation in v_x at v_x + s, zero outside the grid, acting on the x axis of the cube."""

    def __init__(self, vgrid: VelocityGrid):
        self.vgrid = vgrid
        self._cache: dict[float, np.ndarray] = {}

    def matrix(self, shift: float) -> np.ndarray:
        key = round(shift, 15)
        mat = self._cache.get(key)
        if mat is None:
            n = self.vgrid.n
            pos = (self.vgrid.axis + shift - self.vgrid.axis[0]) / self.vgrid.h
            i0 = np.floor(pos).astype(int)
            t = pos - i0
            mat = np.zeros((n, n))
            for k in range(n):
                for j, w in ((i0[k], 1.0 - t[k]), (i0[k] + 1, t[k])):
                    if 0 <= j < n and w != 0.0:
                        mat[k, j] += w
            self._cache[key] = mat
        return mat

    def apply(self, values: np.ndarray, shift: float) -> np.ndarray:
        if shift == 0.0:
            return values
        n = self.vgrid.n
        cube = values.reshape(values.shape[:-1] + (n, n * n))
        out = np.einsum("kj,...jm->...km", self.matrix(shift), cube)
        return out.reshape(values.shape)


def transport_inverse(source: np.ndarray, damping, inflow: BoundaryData, vgrid: VelocityGrid,
                      sgrid: SpatialGrid, alpha: float = 0.0,
                      shear: ShearShift | None = None) -> np.ndarray:
    """Solve v_y d_y G - alpha v_y d_{v_x} G + damping G = source with given inflow.

    ``source`` lives on ``sgrid.points`` (walls included), shape (n_points, n_v).
    Between consecutive points the source is taken linear along the
    characteristic and the damping is integrated exactly.  For alpha != 0 the
    upstream values are read at the sheared v_x by linear interpolation.
    Returns G on the same points; wall rows hold the inflow on incoming
    velocities and the computed outgoing values otherwise.
    """
    d = np.broadcast_to(np.asarray(damping, dtype=float), (vgrid.size,))
    if np.any(d <= 0):
        raise ValueError("damping must be positive")
    source = np.asarray(source, dtype=float)
    pts = sgrid.points
    npnt = pts.size
    if source.shape != (npnt, vgrid.size):
        raise ValueError(f"source shape {source.shape} != {(npnt, vgrid.size)}")
    if alpha != 0.0 and shear is None:
        shear = ShearShift(vgrid)
    vy = vgrid.vy
    up = vy > 0
    avy = np.abs(vy)
    G = np.empty_like(source)

    # upward sweep, kept on v_y > 0
    g = np.where(up, inflow.bottom, 0.0)
    G[0] = g
    for j in range(1, npnt):
        dy = pts[j] - pts[j - 1]
        e, a, b = _etd_weights(dy / avy, d)
        gu, su = g, source[j - 1]
        if alpha != 0.0:
            gu = shear.apply(gu, alpha * dy)
            su = shear.apply(su, alpha * dy)
        g = np.where(up, e * gu + a * su + b * source[j], 0.0)
        G[j] = g

    # downward sweep, kept on v_y < 0
    g = np.where(up, 0.0, inflow.top)
    G[-1] = np.where(up, G[-1], g)
    for j in range(npnt - 2, -1, -1):
        dy = pts[j + 1] - pts[j]
        e, a, b = _etd_weights(dy / avy, d)
        gu, su = g, source[j + 1]
        if alpha != 0.0:
            gu = shear.apply(gu, -alpha * dy)
            su = shear.apply(su, -alpha * dy)
        g = np.where(up, 0.0, e * gu + a * su + b * source[j])
        G[j] = np.where(up, G[j], g)
    return G


def explicit_zero_inflow_solution(source_fn, damping: float, y: np.ndarray, v) -> np.ndarray:
    """Reference for constant-coefficient transport with zero inflow by adaptive quadrature.

    G(y, v) = int_{-1}^{y} e^{-d (y - y')/v_y} S(y', v) / v_y dy' for v_y > 0 and the
    mirrored integral from +1 for v_y < 0.
    """
    from scipy.integrate import quad

    vy = float(v[1])
    out = np.empty(len(y))
    for k, yk in enumerate(y):
        if vy > 0:
            val, _ = quad(lambda s: math.exp(-damping * (yk - s) / vy) * source_fn(s) / vy,
                          -1.0, yk, epsabs=1e-14, epsrel=1e-13, limit=200)
        else:
            val, _ = quad(lambda s: math.exp(-damping * (s - yk) / abs(vy)) * source_fn(s) / abs(vy),
                          yk, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
        out[k] = val
    return out


# bounce cycles ------------------------------------------------------------

def outward_normal(y_wall: float) -> float:
    return 1.0 if y_wall > 0 else -1.0


def sample_wall_velocity(y_wall: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from sqrt(2 pi) mu(v) |v_y| on {v . n(y_wall) > 0} by inverse CDF per axis."""
    shape = (3,) if size is None else (size, 3)
    u = rng.random(shape)
    # keep uniforms strictly inside (0, 1)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    out = np.empty(shape)
    out[..., 0] = ndtri(u[..., 0])
    out[..., 2] = ndtri(u[..., 2])
    out[..., 1] = outward_normal(y_wall) * np.sqrt(-2.0 * np.log(u[..., 1]))
    return out


@dataclass
class BounceCycle:
    """Backward cycle: start (t, y, v) then wall hits (t_k, y_k, v_k), k >= 1.

    ``terminated_at`` is the first k with t_k <= 0, or None when k_max was hit.
    """

    start_t: float
    start_y: float
    start_v: np.ndarray
    alpha: float
    times: list[float] = field(default_factory=list)
    walls: list[float] = field(default_factory=list)
    velocities: list[np.ndarray] = field(default_factory=list)
    terminated_at: int | None = None

    def __len__(self) -> int:
        return len(self.times)


def sample_bounce_cycle(t: float, y: float, v, alpha: float, rng: np.random.Generator,
                        k_max: int = 64) -> BounceCycle:
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    v = np.asarray(v, dtype=float)
    cyc = BounceCycle(start_t=float(t), start_y=float(y), start_v=v.copy(), alpha=float(alpha))
    tb, yb = backward_exit(y, v)
    tk = t - tb
    for k in range(1, k_max + 1):
        vk = sample_wall_velocity(yb, rng)
        cyc.times.append(tk)
        cyc.walls.append(yb)
        cyc.velocities.append(vk)
        if tk <= 0:
            cyc.terminated_at = k
            break
        tb, ynext = backward_exit(yb, vk)
        tk, yb = tk - tb, ynext
    return cyc


def survival_curve(T0: float, k_max: int, n_samples: int, rng: np.random.Generator,
                   start_y: float = 0.0, start_v=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Monte Carlo estimate of P(t_k > 0) for k = 1..k_max with nested samples.

    All k share the same sampled cycles, so the estimate is nonincreasing in k.
    Returns (k, survival, standard error).
    """
    if T0 <= 0:
        raise ValueError("T0 must be positive")
    tb0, _ = backward_exit(start_y, start_v)
    t = np.full(n_samples, T0 - tb0)
    ks = np.arange(1, k_max + 1)
    surv = np.empty(k_max)
    for idx, k in enumerate(ks):
        surv[idx] = np.mean(t > 0)
        if idx + 1 < k_max:
            # each bounce starts on a wall with an outgoing velocity: full traversal
            u = np.clip(rng.random(n_samples), np.finfo(float).tiny, 1.0)
            vy = np.sqrt(-2.0 * np.log(u))
            t = t - 2.0 / vy
    err = np.sqrt(surv * (1.0 - surv) / n_samples)
    return ks, surv, err


def estimate_cycle_survival(T0: float, k: int, n_samples: int, rng: np.random.Generator,
                            start_y: float = 0.0, start_v=(0.0, 1.0, 0.0)) -> float:
    """Probability that the k-th backward bounce time is still positive."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _, surv, _ = survival_curve(T0, k, n_samples, rng, start_y, start_v)
    return float(surv[-1])


def weight_ratio_check(cycle: BounceCycle, q: int, alpha: float | None = None) -> float:
    """max_j w~(v_j) / w~(V^j(t_{j+1})) with w~ = (sqrt(2 pi) w_q sqrt(mu))^{-1}.

    V^j(t_{j+1}) is the sheared velocity after one full traversal from wall j.
    """
    alpha = cycle.alpha if alpha is None else alpha
    worst = 1.0 if cycle.velocities else 0.0
    for j in range(len(cycle.velocities) - 1):
        vj = cycle.velocities[j]
        tb, _ = backward_exit(cycle.walls[j], vj)
        V = vj.copy()
        V[0] += alpha * tb * vj[1]
        v2, V2 = float(vj @ vj), float(V @ V)
        logr = q * (math.log1p(V2) - math.log1p(v2)) + 0.25 * (v2 - V2)
        worst = max(worst, math.exp(logr))
    return worst


def weight_ratio_bound(q: int, alpha: float) -> float:
    return (1.0 + 4.0 * alpha * alpha) ** q * math.exp(alpha * alpha)
