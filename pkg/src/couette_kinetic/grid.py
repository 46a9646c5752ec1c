"""Velocity and spatial discretizations plus tabulated reference functions."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

MU_NORM = (2.0 * np.pi) ** -1.5


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform midpoint tensor grid on the cube [-v_max, v_max]^3.

    Nodes sit at cell midpoints, so no node lies on a coordinate plane and
    in particular none has v_y = 0.  Flat index is (ix * n + iy) * n + iz.
    """

    n_per_axis: int
    v_max: float
    axis: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.n_per_axis

    @property
    def size(self) -> int:
        return self.n_per_axis ** 3

    @property
    def h(self) -> float:
        return 2.0 * self.v_max / self.n_per_axis

    @property
    def weight(self) -> float:
        return self.h ** 3

    @property
    def symmetric(self) -> bool:
        return bool(np.allclose(self.axis, -self.axis[::-1], atol=0.0, rtol=0.0))

    @property
    def vx(self) -> np.ndarray:
        return self.nodes[:, 0]

    @property
    def vy(self) -> np.ndarray:
        return self.nodes[:, 1]

    @property
    def vz(self) -> np.ndarray:
        return self.nodes[:, 2]

    @property
    def speed2(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.nodes, self.nodes)

    def flip_index(self, component: int) -> np.ndarray:
        """Index permutation realizing v_component -> -v_component."""
        n = self.n_per_axis
        idx = np.arange(self.size).reshape(n, n, n)
        return np.flip(idx, axis=component).ravel()

    def as_cube(self, values: np.ndarray) -> np.ndarray:
        """View trailing velocity axis as (n, n, n)."""
        n = self.n_per_axis
        return values.reshape(values.shape[:-1] + (n, n, n))

    def content_hash(self) -> str:
        tag = f"vgrid:{self.n_per_axis}:{self.v_max!r}".encode()
        return hashlib.sha256(tag).hexdigest()[:16]


@dataclass(frozen=True)
class SpatialGrid:
    """Cell-centred nodes in (-1, 1) together with the two wall points.

    ``points`` lists the wall -1, the n_y interior nodes and the wall +1.
    Interior nodes are the midpoints of n_y equal cells, which is also the
    finite-volume layout used by the time stepper.
    """

    n_y: int
    nodes: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)

    @property
    def dy(self) -> float:
        return 2.0 / self.n_y

    @property
    def n_points(self) -> int:
        return self.n_y + 2


@dataclass(frozen=True)
class ReferenceTables:
    mu: np.ndarray
    sqrt_mu: np.ndarray
    w_q: np.ndarray
    q: int


def build_velocity_grid(n_per_axis: int, v_max: float) -> VelocityGrid:
    n_per_axis = int(n_per_axis)
    if n_per_axis < 2 or n_per_axis % 2:
        raise ValueError(f"n_per_axis must be even and >= 2, got {n_per_axis}")
    if not v_max > 0:
        raise ValueError("v_max must be positive")
    h = 2.0 * v_max / n_per_axis
    axis = h * (np.arange(n_per_axis) + 0.5) - v_max
    # enforce exact mirror symmetry of the axis
    axis = 0.5 * (axis - axis[::-1])
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    weights = np.full(nodes.shape[0], h ** 3)
    return VelocityGrid(n_per_axis, float(v_max), axis, nodes, weights)


def build_spatial_grid(n_y: int) -> SpatialGrid:
    n_y = int(n_y)
    if n_y < 8:
        raise ValueError(f"n_y must be >= 8, got {n_y}")
    dy = 2.0 / n_y
    nodes = dy * (np.arange(n_y) + 0.5) - 1.0
    nodes = 0.5 * (nodes - nodes[::-1])
    points = np.concatenate([[-1.0], nodes, [1.0]])
    return SpatialGrid(n_y, nodes, points)


def maxwellian(v2: np.ndarray | float) -> np.ndarray:
    return MU_NORM * np.exp(-0.5 * np.asarray(v2))


def eval_reference(grid: VelocityGrid, q: int) -> ReferenceTables:
    q = int(q)
    if q < 0:
        raise ValueError("q must be nonnegative")
    v2 = grid.speed2
    mu = maxwellian(v2)
    sqrt_mu = (2.0 * np.pi) ** -0.75 * np.exp(-0.25 * v2)
    w_q = (1.0 + v2) ** q
    return ReferenceTables(mu=mu, sqrt_mu=sqrt_mu, w_q=w_q, q=q)


def mass_of_maxwellian(grid: VelocityGrid) -> float:
    return float(np.sum(grid.quad_weights * maxwellian(grid.speed2)))


def check_weight_range(q: int, v_max: float) -> bool:
    """True when w_q stays finite in double precision on the whole cube."""
    return q * np.log1p(3.0 * v_max ** 2) < 700.0


@dataclass(frozen=True)
class SymmetryMaps:
    """Signed axis permutations carrying each node to its representative.

    For node i, ``perm[i]`` and ``flip[i]`` define S_i with
    (S_i v)_d = s_d v_{perm_d}, s_d = -1 where flip is set, and S_i v_i lies in
    the sector v_x >= v_y >= v_z > 0.  ``reps`` lists the representative
    node indices and ``rep_of[i]`` is the position of S_i v_i in ``reps``.
    """

    perm: np.ndarray
    flip: np.ndarray
    reps: np.ndarray
    rep_of: np.ndarray

    @property
    def sign(self) -> np.ndarray:
        return np.where(self.flip, -1.0, 1.0)

    def mapped_indices(self, i: int, n: int) -> np.ndarray:
        """Flat indices of S_i v_j for every node j."""
        idx = np.indices((n, n, n)).reshape(3, -1)
        out = np.empty_like(idx)
        for d in range(3):
            comp = idx[self.perm[i, d]]
            out[d] = n - 1 - comp if self.flip[i, d] else comp
        return (out[0] * n + out[1]) * n + out[2]


def symmetry_maps(grid: VelocityGrid) -> SymmetryMaps:
    n = grid.n
    idx = np.indices((n, n, n)).reshape(3, -1).T
    # distance of each index from the centre plane, as a tie-exact integer
    folded = np.maximum(idx, n - 1 - idx)
    perm = np.argsort(-folded, axis=1, kind="stable")
    flip = np.take_along_axis(idx, perm, axis=1) < n // 2
    rep_triple = np.take_along_axis(folded, perm, axis=1)
    rep_flat = (rep_triple[:, 0] * n + rep_triple[:, 1]) * n + rep_triple[:, 2]
    reps, rep_of = np.unique(rep_flat, return_inverse=True)
    return SymmetryMaps(perm.astype(np.int64), flip, reps.astype(np.int64), rep_of.astype(np.int64))
