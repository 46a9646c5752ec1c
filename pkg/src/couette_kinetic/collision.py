"""Maxwell-molecule collision operator on the discrete velocity grid.

The angular integral uses a quadrature aligned with the relative velocity
u = v* - v: omega = cos(theta) u/|u| + sin(theta)(cos(phi) e1 + sin(phi) e2).
Since B depends only on |cos(theta)| and v' is unchanged under
omega -> -omega, one hemisphere suffices (weights doubled).  This makes the
angular weight of every pair identical, so the discrete collision frequency
is exactly independent of v.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .fields import ABSOLUTE, CAFLISCH_RAW, PERTURBATION, unwrap
from .grid import ReferenceTables, SymmetryMaps, VelocityGrid, symmetry_maps
from .storage import (CacheMismatch, cache_key, default_cache_dir, read_kernel_cache,
                      write_kernel_cache)

log = logging.getLogger(__name__)

DEFAULT_B_AMP = 1.0 / (2.0 * math.pi)
OPERATOR_VERSION = 3
MAX_TENSOR_NODES = 600


class AssemblyError(RuntimeError):
    pass


class TailOutsideTruncation(ValueError):
    pass


@dataclass(frozen=True)
class CollisionKernelSpec:
    """Cutoff Maxwell kernel B0(z) = b_amp |z| and its sphere quadrature.

    ``interpolation`` selects how densities are read at off-grid
    post-collision velocities: ``ratio`` interpolates F/mu (and restores the
    Maxwellian factor exactly), ``plain`` interpolates F itself.
    """

    b_amp: float = DEFAULT_B_AMP
    n_theta: int = 16
    n_phi: int = 16
    interpolation: str = "ratio"
    max_clip_fraction: float = 0.75
    nu_rel_tol: float = 1e-10

    def __post_init__(self):
        if not self.b_amp > 0:
            raise ValueError("b_amp must be positive")
        if self.n_theta < 2 or self.n_theta % 2:
            raise ValueError("n_theta must be even and >= 2")
        if self.n_phi < 1:
            raise ValueError("n_phi must be >= 1")
        if self.interpolation not in ("ratio", "plain"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")

    @property
    def n_omega(self) -> int:
        return self.n_theta * self.n_phi

    def B0(self, z):
        return self.b_amp * np.abs(z)

    @cached_property
    def _full_sphere(self):
        z, w = np.polynomial.legendre.leggauss(self.n_theta)
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        st = np.sqrt(1.0 - z * z)
        nodes = np.stack([
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(z, self.n_phi),
        ], axis=1)
        weights = np.outer(w, np.full(self.n_phi, 2.0 * np.pi / self.n_phi)).ravel()
        return nodes, weights

    @property
    def omega_nodes(self) -> np.ndarray:
        """Product Gauss-Legendre x uniform-azimuth nodes on the unit sphere."""
        return self._full_sphere[0]

    @property
    def omega_weights(self) -> np.ndarray:
        return self._full_sphere[1]

    @cached_property
    def hemisphere(self):
        """(cos, sin, cos phi, sin phi, weights) with B0 and the factor 2 folded in."""
        z, w = np.polynomial.legendre.leggauss(self.n_theta // 2)
        ct = 0.5 * (z + 1.0)
        w = 0.5 * w
        st = np.sqrt(1.0 - ct * ct)
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        wang = 2.0 * np.outer(self.B0(ct) * w, np.full(self.n_phi, 2.0 * np.pi / self.n_phi))
        return ct, st, np.cos(phi), np.sin(phi), wang

    @property
    def angular_total(self) -> float:
        """Integral of B0 over the sphere as seen by every colliding pair."""
        return float(self.hemisphere[4].sum())

    @property
    def b0(self) -> float:
        # 3 pi int_{-1}^{1} B0(z) z^2 (1 - z^2) dz; integrand even, polynomial on [0, 1]
        z, w = np.polynomial.legendre.leggauss(max(4, self.n_theta // 2))
        z = 0.5 * (z + 1.0)
        w = 0.5 * w
        return float(6.0 * np.pi * np.sum(w * self.B0(z) * z * z * (1.0 - z * z)))


def chi_cutoff(speed: np.ndarray, M: float) -> np.ndarray:
    """Smooth monotone cutoff: 0 for |v| <= M, 1 for |v| >= M + 1."""
    t = np.clip(np.asarray(speed, dtype=float) - M, 0.0, 1.0)

    def bump(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a = bump(t)
    b = bump(1.0 - t)
    return a / (a + b)


def auto_cutoff(q: int, v_max: float, cap_fraction: float = 0.8) -> tuple[float, bool]:
    """M = q^2 capped at cap_fraction * v_max; returns (M, capped)."""
    cap = cap_fraction * v_max
    M = float(q * q)
    return (cap, True) if M > cap else (M, False)


@dataclass(frozen=True)
class MacroProjection:
    """Coefficients of P0 g = [a + b.v + c(|v|^2 - 3)] sqrt(mu), per leading index."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.a[..., None], self.b, self.c[..., None]], axis=-1)


class MacroBasis:
    """Quadrature inner products against {1, v, |v|^2 - 3} sqrt(mu).

    Inner products pair v_x with -v_x before summing, so a field odd in v_x
    has vanishing a, b_y, b_z, c exactly (not merely to rounding).
    """

    def __init__(self, grid: VelocityGrid, tables: ReferenceTables):
        self.grid = grid
        s = tables.sqrt_mu
        v = grid.nodes
        self.functions = np.stack([s, v[:, 0] * s, v[:, 1] * s, v[:, 2] * s,
                                   (grid.speed2 - 3.0) * s])
        gram = self.inner(self.functions[:, None, :], self.functions[None, :, :])
        self._gram_b = np.diag(gram)[1:4].copy()
        self._gram_ac = gram[np.ix_([0, 4], [0, 4])]
        self._gram_ac_inv = np.linalg.inv(self._gram_ac)

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        n = self.grid.n
        h = n // 2
        prod = np.asarray(f) * np.asarray(g)
        cube = prod.reshape(prod.shape[:-1] + (n, n, n))
        folded = cube[..., h:, :, :] + cube[..., h - 1::-1, :, :]
        return self.grid.weight * folded.sum(axis=(-3, -2, -1))

    def project(self, f: np.ndarray) -> MacroProjection:
        f = np.asarray(f, dtype=float)
        r = np.stack([self.inner(f, phi) for phi in self.functions], axis=-1)
        ac = r[..., [0, 4]] @ self._gram_ac_inv.T
        b = r[..., 1:4] / self._gram_b
        return MacroProjection(ac[..., 0], b, ac[..., 1])

    def reconstruct(self, proj: MacroProjection) -> np.ndarray:
        coeffs = proj.as_array()
        return coeffs @ self.functions

    def remove(self, f: np.ndarray) -> np.ndarray:
        return f - self.reconstruct(self.project(f))


@dataclass
class CollisionOperators:
    """Assembled linear collision operators on one velocity grid.

    ``K_matrix`` acts on sqrt(mu)-perturbations; ``Kcal_matrix`` on absolute
    densities, Kcal = diag(sqrt mu) K diag(1/sqrt mu).  Matrices include the
    velocity cell volume, so applying them is a plain matrix-vector product.
    """

    grid: VelocityGrid
    tables: ReferenceTables
    spec: CollisionKernelSpec
    M: float
    nu0: float
    nu_per_node: np.ndarray = field(repr=False)
    chiM_mask: np.ndarray = field(repr=False)
    b0: float
    clip_fraction: float
    raw_asymmetry: float
    conservative: bool
    symmetry: SymmetryMaps = field(repr=False)
    _K: np.ndarray | None = field(default=None, repr=False)
    _Kcal: np.ndarray | None = field(default=None, repr=False)
    _tensor: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_v(self) -> int:
        return self.grid.size

    @cached_property
    def basis(self) -> MacroBasis:
        return MacroBasis(self.grid, self.tables)

    @property
    def K_matrix(self) -> np.ndarray:
        if self._K is None:
            s = self.tables.sqrt_mu
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                self._K = self._Kcal * s[None, :] / s[:, None]
        return self._K

    @property
    def Kcal_matrix(self) -> np.ndarray:
        if self._Kcal is None:
            s = self.tables.sqrt_mu
            return self._K * s[:, None] / s[None, :]
        return self._Kcal

    @property
    def angular_total(self) -> float:
        return self.spec.angular_total

    # linear operators -------------------------------------------------
    def apply_K(self, g) -> np.ndarray:
        g = unwrap(g, PERTURBATION)
        return g @ self.K_matrix.T

    def apply_Kcal(self, G) -> np.ndarray:
        G = unwrap(G, (ABSOLUTE, CAFLISCH_RAW))
        if self._Kcal is None:
            s = self.tables.sqrt_mu
            return s * ((G / s) @ self._K.T)
        return G @ self._Kcal.T

    def apply_L(self, f) -> np.ndarray:
        f = unwrap(f, PERTURBATION)
        return self.nu0 * f - f @ self.K_matrix.T

    # nonlinear terms --------------------------------------------------
    def gain_tensor(self) -> np.ndarray:
        """Packed symmetric gain coefficients, built on first use."""
        if self._tensor is None:
            self._tensor = _assemble_tensor(self)
        return self._tensor

    def collide_sym(self, F1, F2=None, conservative: bool = True) -> np.ndarray:
        """(Q(F1,F2) + Q(F2,F1))/2 from the gain tensor; absolute densities.

        With ``conservative`` the five collision-invariant moments of the result
        are removed (in the sqrt(mu) frame), as used by the solvers.
        """
        F1 = unwrap(F1, (ABSOLUTE, CAFLISCH_RAW))
        F2 = F1 if F2 is None else unwrap(F2, (ABSOLUTE, CAFLISCH_RAW))
        shape = np.broadcast_shapes(F1.shape, F2.shape)
        a = np.ascontiguousarray(np.broadcast_to(F1, shape).reshape(-1, self.n_v))
        b = np.ascontiguousarray(np.broadcast_to(F2, shape).reshape(-1, self.n_v))
        T = self.gain_tensor()
        gain = _kernels.pair_products(a, b, self.n_v) @ T.T
        rate = self.angular_total * self.grid.weight
        loss = 0.5 * rate * (b * a.sum(axis=1, keepdims=True) + a * b.sum(axis=1, keepdims=True))
        out = (gain - loss).reshape(shape)
        if conservative:
            out = self.conserve(out)
        return out

    def quadratic(self, F1, F2=None) -> np.ndarray:
        """Symmetrized Q(F1, F2) with invariant moments removed.

        Uses the gain tensor when the grid is small enough and the direct
        quadrature otherwise.
        """
        if self.n_v <= MAX_TENSOR_NODES:
            return self.collide_sym(F1, F2, conservative=True)
        F1 = unwrap(F1, (ABSOLUTE, CAFLISCH_RAW))
        F2 = F1 if F2 is None else unwrap(F2, (ABSOLUTE, CAFLISCH_RAW))
        if F2 is F1:
            out = apply_Q(self, F1, F1)
        else:
            out = 0.5 * (apply_Q(self, F1, F2) + apply_Q(self, F2, F1))
        return self.conserve(out)

    def relaxation_source(self, g: np.ndarray) -> np.ndarray:
        """Kcal g + Q(g, g) for an absolute deviation g = F - mu.

        Together with -nu0 g this is the discrete collision term of mu + g;
        it vanishes at g = 0 and conserves mass, momentum and energy exactly.
        """
        return self.apply_Kcal(g) + self.quadratic(g)

    def conserve(self, Q: np.ndarray) -> np.ndarray:
        s = self.tables.sqrt_mu
        return s * self.basis.remove(Q / s)

    # projections ------------------------------------------------------
    def project_P0(self, f) -> MacroProjection:
        return self.basis.project(unwrap(f, PERTURBATION))

    def project_P1(self, f) -> np.ndarray:
        return self.basis.remove(unwrap(f, PERTURBATION))


# assembly --------------------------------------------------------------

def _quadrature_args(grid: VelocityGrid, spec: CollisionKernelSpec):
    ct, st, cp, sp, wang = spec.hemisphere
    return float(grid.axis[0]), grid.h, grid.n, ct, st, cp, sp, wang, grid.weight


def _cache_parts(grid: VelocityGrid, spec: CollisionKernelSpec, conservative: bool) -> dict:
    return {
        "grid": grid.content_hash(), "b_amp": spec.b_amp, "n_theta": spec.n_theta,
        "n_phi": spec.n_phi, "interp": spec.interpolation, "conservative": conservative,
        "version": OPERATOR_VERSION,
    }


def _orthonormal_invariants(grid: VelocityGrid, tables: ReferenceTables) -> np.ndarray:
    s = tables.sqrt_mu
    v = grid.nodes
    raw = np.stack([s, v[:, 0] * s, v[:, 1] * s, v[:, 2] * s, grid.speed2 * s], axis=1)
    U, _ = np.linalg.qr(raw)
    return U


def _make_conservative(K: np.ndarray, nu0: float, U: np.ndarray, block: int = 2048) -> float:
    """In place: K <- symmetric part with exact collision-invariant kernel.

    Replaces L = nu0 - K by P1 L P1 (P1 the orthogonal complement of the
    invariants) after symmetrizing.  Returns the relative raw asymmetry.
    """
    n = K.shape[0]
    scale = float(np.max(np.abs(K)))
    asym = 0.0
    for i0 in range(0, n, block):
        i1 = min(n, i0 + block)
        for j0 in range(i0, n, block):
            j1 = min(n, j0 + block)
            A = K[i0:i1, j0:j1]
            B = K[j0:j1, i0:i1].T
            asym = max(asym, float(np.max(np.abs(A - B))))
            avg = 0.5 * (A + B)
            K[i0:i1, j0:j1] = avg
            K[j0:j1, i0:i1] = avg.T
    W = nu0 * U - K @ U
    C = U.T @ W
    for i0 in range(0, n, block):
        i1 = min(n, i0 + block)
        K[i0:i1] += U[i0:i1] @ W.T + W[i0:i1] @ U.T - (U[i0:i1] @ C) @ U.T
    return asym / scale if scale > 0 else 0.0


def assemble_operators(grid: VelocityGrid, tables: ReferenceTables, spec: CollisionKernelSpec,
                       M: float, *, conservative: bool = True,
                       cache_dir: str | Path | None = None, use_cache: bool = True) -> CollisionOperators:
    """Assemble nu0, K (and Kcal), chi_M and b0 for one grid and kernel.

    Only rows of representative nodes (one per orbit of the cube's signed
    axis permutations) are integrated; the remaining rows follow by
    symmetry.  With ``conservative`` the matrix is symmetrized and its
    null space set exactly to the five collision invariants.
    """
    if tables.mu.shape[0] != grid.size:
        raise ValueError("reference tables do not match the grid")
    if not 0 < M < grid.v_max:
        raise ValueError(f"cutoff M={M} must lie in (0, v_max={grid.v_max})")
    if not grid.symmetric:
        raise ValueError("velocity grid must be mirror symmetric")
    sym = symmetry_maps(grid)
    mu = tables.mu
    rate = spec.angular_total * grid.weight
    # loss integral sum_j cell * mu_j * (angular weight of pair (i, j)); the
    # aligned rule gives every pair the same angular weight
    nu_per_node = np.full(grid.size, rate * float(np.sum(mu)))
    nu0 = float(nu_per_node.mean())
    spread = float(np.ptp(nu_per_node) / nu0)
    if spread > spec.nu_rel_tol:
        raise AssemblyError(f"collision frequency varies across nodes (relative spread {spread:.3e})")

    if cache_dir is None and use_cache:
        cache_dir = default_cache_dir()
    parts = _cache_parts(grid, spec, conservative)
    key = cache_key(parts)
    path = Path(cache_dir) / f"kernel_{key.hex()[:24]}.bin" if (cache_dir and use_cache) else None

    matrix = None
    if path is not None and path.exists():
        try:
            matrix, meta = read_kernel_cache(path, key, 2)
            clip_fraction, raw_asym = float(meta[0]), float(meta[1])
            log.info("loaded collision kernel from %s", path)
        except CacheMismatch as exc:
            log.warning("ignoring kernel cache: %s", exc)
            matrix = None
    if matrix is None:
        matrix, clip_fraction, raw_asym = _assemble_matrix(grid, tables, spec, sym, nu0, conservative)
        if clip_fraction > spec.max_clip_fraction:
            raise AssemblyError(
                f"{clip_fraction:.1%} of post-collision stencils leave the grid "
                f"(limit {spec.max_clip_fraction:.0%}); increase v_max")
        if path is not None:
            write_kernel_cache(path, key, spec.b_amp, spec.n_omega, matrix,
                               np.array([clip_fraction, raw_asym]))
    elif clip_fraction > spec.max_clip_fraction:
        raise AssemblyError(f"cached kernel has clip fraction {clip_fraction:.1%}")

    chi = chi_cutoff(np.sqrt(grid.speed2), M)
    ops = CollisionOperators(
        grid=grid, tables=tables, spec=spec, M=float(M), nu0=nu0, nu_per_node=nu_per_node,
        chiM_mask=chi, b0=spec.b0, clip_fraction=clip_fraction, raw_asymmetry=raw_asym,
        conservative=conservative, symmetry=sym)
    if conservative:
        ops._K = matrix
    else:
        ops._Kcal = matrix
    return ops


def _assemble_matrix(grid, tables, spec, sym: SymmetryMaps, nu0: float, conservative: bool):
    x0, h, n, ct, st, cp, sp, wang, cell = _quadrature_args(grid, spec)
    mu = tables.mu
    ratio = spec.interpolation == "ratio"
    with np.errstate(over="ignore", divide="ignore"):
        inv_mu = 1.0 / mu if ratio else np.ones_like(mu)
    if ratio and not np.all(np.isfinite(inv_mu)):
        raise AssemblyError("1/mu overflows on this grid; use interpolation='plain'")
    rep_rows, clipped = _kernels.assemble_kcal_rows(
        sym.reps, grid.nodes, mu, inv_mu, ratio, x0, h, n, ct, st, cp, sp, wang, cell)
    multiplicity = np.bincount(sym.rep_of, minlength=len(sym.reps))
    combos = 2.0 * grid.size * grid.size * ct.size * cp.size
    clip_fraction = float(np.dot(multiplicity, clipped) / combos)

    N = grid.size
    matrix = np.empty((N, N))
    _kernels.fill_from_representatives(rep_rows, sym.rep_of, sym.perm, sym.flip, n, matrix)
    del rep_rows
    if not conservative:
        # raw asymmetry in the sqrt(mu) frame, when that frame is representable
        s = tables.sqrt_mu
        if np.all(s > 1e-150):
            K = matrix * s[None, :] / s[:, None]
            raw_asym = float(np.max(np.abs(K - K.T)) / np.max(np.abs(K)))
        else:
            raw_asym = float("nan")
        return matrix, clip_fraction, raw_asym
    s = tables.sqrt_mu
    inv_s = 1.0 / s
    for i0 in range(0, N, 2048):
        matrix[i0:i0 + 2048] *= inv_s[i0:i0 + 2048, None]
        matrix[i0:i0 + 2048] *= s[None, :]
    U = _orthonormal_invariants(grid, tables)
    raw_asym = _make_conservative(matrix, nu0, U)
    return matrix, clip_fraction, raw_asym


def _assemble_tensor(ops: CollisionOperators) -> np.ndarray:
    grid = ops.grid
    N = grid.size
    if N > MAX_TENSOR_NODES:
        raise ValueError(f"gain tensor needs {N} <= {MAX_TENSOR_NODES} velocity nodes; use apply_Q")
    x0, h, n, ct, st, cp, sp, wang, cell = _quadrature_args(grid, ops.spec)
    mu = ops.tables.mu
    if ops.spec.interpolation == "ratio":
        colscale, rowscale = 1.0 / mu, mu
    else:
        colscale, rowscale = np.ones(N), np.ones(N)
    sym = ops.symmetry
    rep = _kernels.assemble_gain_tensor_rows(sym.reps, grid.nodes, colscale, rowscale,
                                             x0, h, n, ct, st, cp, sp, wang, cell)
    T = np.empty((N, N * (N + 1) // 2))
    _kernels.fill_tensor_from_representatives(rep, sym.rep_of, sym.perm, sym.flip, n, T)
    return T


# evaluation ------------------------------------------------------------

def apply_Q(ops: CollisionOperators, F1, F2) -> np.ndarray:
    """Q(F1, F2) by direct quadrature over (v*, omega); absolute densities.

    Bilinear; F1 is the partner density (read at v*, v*'), F2 the density
    at v (read at v, v').
    """
    F1 = unwrap(F1, (ABSOLUTE, CAFLISCH_RAW))
    F2 = unwrap(F2, (ABSOLUTE, CAFLISCH_RAW))
    shape = np.broadcast_shapes(F1.shape, F2.shape)
    N = ops.n_v
    a = np.broadcast_to(F1, shape).reshape(-1, N)
    b = np.broadcast_to(F2, shape).reshape(-1, N)
    grid = ops.grid
    x0, h, n, ct, st, cp, sp, wang, cell = _quadrature_args(grid, ops.spec)
    if ops.spec.interpolation == "ratio":
        scale = ops.tables.mu
        a_in, b_in = a / scale, b / scale
    else:
        scale = np.ones(N)
        a_in, b_in = a, b
    sym = ops.symmetry
    gain = _kernels.q_gain_direct(np.ascontiguousarray(a_in.T), np.ascontiguousarray(b_in.T),
                                  scale, sym.perm, sym.sign, grid.nodes,
                                  x0, h, n, ct, st, cp, sp, wang, cell).T
    loss = ops.angular_total * cell * b * a.sum(axis=1, keepdims=True)
    return (gain - loss).reshape(shape)


def gamma_single(ops: CollisionOperators, f, g) -> np.ndarray:
    """mu^{-1/2} Q(sqrt(mu) f, sqrt(mu) g)."""
    s = ops.tables.sqrt_mu
    f = unwrap(f, PERTURBATION)
    g = unwrap(g, PERTURBATION)
    return apply_Q(ops, s * f, s * g) / s


def gamma_sym(ops: CollisionOperators, f, g) -> np.ndarray:
    """mu^{-1/2} [Q(sqrt(mu) f, sqrt(mu) g) + Q(sqrt(mu) g, sqrt(mu) f)]."""
    return gamma_single(ops, f, g) + gamma_single(ops, g, f)


def apply_L(ops: CollisionOperators, f) -> np.ndarray:
    return ops.apply_L(f)


def apply_Gamma(ops: CollisionOperators, f, g, form: str = "single") -> np.ndarray:
    if form == "single":
        return gamma_single(ops, f, g)
    if form == "sym":
        return gamma_sym(ops, f, g)
    raise ValueError(f"unknown Gamma form {form!r}")


def project_P0(f, ops: CollisionOperators) -> MacroProjection:
    return ops.project_P0(f)


def project_P1(f, ops: CollisionOperators) -> np.ndarray:
    return ops.project_P1(f)


# numerical bound checks ------------------------------------------------

def weighted_Kcal_tail_norm(ops: CollisionOperators, tables: ReferenceTables, q: int,
                            M: float | None = None) -> float:
    """sup over |v| >= M of sum_j |Kcal_ij| w_q(v_i) / w_q(v_j), with M = q^2 by default.

    This is the operator norm of w_q Kcal w_q^{-1} restricted to the tail
    rows, in the sup norm.
    """
    M = float(q * q) if M is None else float(M)
    if M >= ops.grid.v_max:
        raise TailOutsideTruncation(f"tail |v| >= {M} lies outside the truncation v_max={ops.grid.v_max}")
    speed = np.sqrt(ops.grid.speed2)
    rows = np.nonzero(speed >= M)[0]
    if rows.size == 0:
        raise TailOutsideTruncation(f"no velocity nodes with |v| >= {M}")
    logw = q * np.log1p(ops.grid.speed2)
    Kc = ops.Kcal_matrix[rows]
    ratio = np.exp(logw[rows, None] - logw[None, :])
    return float(np.max(np.sum(np.abs(Kc) * ratio, axis=1)))


def kernel_row_bound(ops: CollisionOperators, q: int = 0) -> float:
    """Fitted C in sum_j |k_w(v_i, v_j)| <= C / (1 + |v_i|), k_w = w_q(v) k(v, v*) / w_q(v*)."""
    K = ops.K_matrix
    logw = q * np.log1p(ops.grid.speed2)
    rows = np.sum(np.abs(K) * np.exp(logw[:, None] - logw[None, :]), axis=1)
    return float(np.max((1.0 + np.sqrt(ops.grid.speed2)) * rows))


def self_adjointness_defect(ops: CollisionOperators, rng: np.random.Generator, samples: int = 8) -> float:
    worst = 0.0
    for _ in range(samples):
        f = rng.standard_normal(ops.n_v)
        g = rng.standard_normal(ops.n_v)
        lhs = np.dot(ops.apply_L(f), g)
        rhs = np.dot(f, ops.apply_L(g))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(f) * np.linalg.norm(g)))
    return worst


def spectral_gap(ops: CollisionOperators, rng: np.random.Generator | None = None,
                 samples: int = 64) -> float:
    """Smallest Rayleigh quotient <L P1 f, P1 f> / |P1 f|^2.

    With ``rng`` the minimum is over random samples; otherwise it is the
    exact smallest eigenvalue of L on the orthogonal complement of the
    invariants.
    """
    if rng is not None:
        best = np.inf
        for _ in range(samples):
            f = ops.project_P1(rng.standard_normal(ops.n_v))
            best = min(best, float(np.dot(ops.apply_L(f), f) / np.dot(f, f)))
        return best
    U = _orthonormal_invariants(ops.grid, ops.tables)
    L = ops.nu0 * np.eye(ops.n_v) - ops.K_matrix
    P = np.eye(ops.n_v) - U @ U.T
    evals = np.linalg.eigvalsh(P @ L @ P)
    # the five invariant directions show up as (numerical) zeros
    return float(np.sort(evals)[5])


def gamma_weighted_constant(ops: CollisionOperators, tables: ReferenceTables,
                            rng: np.random.Generator, samples: int = 4) -> float:
    """Fitted C in |w_q Gamma(f, g)|_inf <= C |w_q f|_inf |w_q g|_inf."""
    w = tables.w_q
    worst = 0.0
    for _ in range(samples):
        f = rng.uniform(-1.0, 1.0, ops.n_v) / w
        g = rng.uniform(-1.0, 1.0, ops.n_v) / w
        s = tables.sqrt_mu
        val = ops.collide_sym(s * f, s * g, conservative=False) / s
        worst = max(worst, float(np.max(np.abs(w * val)) /
                                 (np.max(np.abs(w * f)) * np.max(np.abs(w * g)))))
    return worst
