import numpy as np
import pytest

from couette_kinetic.collision import project_P0
from couette_kinetic.grid import build_spatial_grid
from couette_kinetic.steady import (SolverError, StabilityError, _rel_change, _slab_mass, check_stability,
                                    compose_steady, d_vx, g1_source, homogeneous_G1_reference,
                                    make_odd_in_vx, outgoing_flux, solve_G1, solve_remainder,
                                    steady_residual, wall_maxwellian)
from couette_kinetic.transport import BoundaryData, transport_inverse


def test_uncoupled_G1_is_the_explicit_solution(ops8, sgrid8):
    sol = solve_G1(ops8, sgrid8, epsilons=(1e-8,), sigma=0.0)
    g = ops8.grid
    d = ops8.nu0 + 1e-8
    y = sgrid8.points[:, None]
    c = g1_source(ops8)[None, :]
    up = g.vy > 0
    t = np.where(up, (y + 1) / g.vy, (y - 1) / g.vy)
    exact = (c / d) * (1 - np.exp(-d * t))
    assert np.max(np.abs(sol.values - exact)) < 1e-8


def test_homogeneous_G1_approaches_the_shear_mode(ops6, ops8):
    errs = []
    for ops in (ops6, ops8):
        G = solve_G1(ops, None, epsilons=(1e-8,)).values
        ref = homogeneous_G1_reference(ops)
        errs.append(np.linalg.norm(G - ref) / np.linalg.norm(ref))
    assert errs[1] < errs[0]


def test_G1_is_odd_with_vanishing_moments(ops8, g1_8):
    G = g1_8.values
    flip = ops8.grid.flip_index(0)
    assert np.array_equal(G, -G[:, flip])
    p = project_P0(G, ops8)
    assert not np.any(p.a) and not np.any(p.b[..., 1:]) and not np.any(p.c)
    # zero inflow at both walls
    up = ops8.grid.vy > 0
    assert not np.any(G[0, up]) and not np.any(G[-1, ~up])


def test_G1_is_a_fixed_point(ops8, sgrid8, g1_8):
    G = g1_8.values
    rhs = g1_source(ops8) + ops8.apply_K(G)
    again = make_odd_in_vx(transport_inverse(rhs, ops8.nu0 + 1e-8, BoundaryData.zeros(ops8.n_v),
                                             ops8.grid, sgrid8), ops8)
    assert _rel_change(again, G, ops8.tables.w_q) < 1e-9


def test_G1_independent_of_continuation(ops8, sgrid8, g1_8):
    one = solve_G1(ops8, sgrid8, sigma_steps=1)
    assert _rel_change(one.values, g1_8.values, ops8.tables.w_q) < 1e-9


def test_G1_failure_reports_stage(ops8, sgrid8):
    with pytest.raises(SolverError) as info:
        solve_G1(ops8, sgrid8, epsilons=(0.1,), sigma_steps=1, max_iter=2, tol=1e-14)
    assert "G1" in info.value.stage


def test_odd_symmetrization_is_idempotent(ops8, rng):
    x = rng.standard_normal((3, ops8.n_v))
    once = make_odd_in_vx(x, ops8)
    assert np.array_equal(make_odd_in_vx(once, ops8), once)


def test_vx_difference_of_linear_profile(ops8):
    g = ops8.grid
    d = d_vx(np.broadcast_to(g.vx, (2, ops8.n_v)), ops8)
    inner = np.abs(g.vx) < g.axis[-1] - g.h
    assert np.allclose(d[:, inner], 1.0, atol=1e-13)


def test_wall_maxwellian_has_unit_flux(ops8):
    Mb, Mt = wall_maxwellian(ops8)
    g = ops8.grid
    assert g.weight * np.sum(np.abs(g.vy) * Mb) == pytest.approx(1.0, rel=1e-14)
    assert g.weight * np.sum(np.abs(g.vy) * Mt) == pytest.approx(1.0, rel=1e-14)
    assert not np.any(Mb[g.vy < 0]) and not np.any(Mt[g.vy > 0])


def test_zero_sources_give_zero_remainder(ops8, sgrid8, g1_8):
    rem = solve_remainder(g1_8, ops8, sgrid8, 0.0, epsilons=(1e-8,),
                          source_override=np.zeros(ops8.n_v))
    assert np.max(np.abs(rem.remainder)) == 0.0


def test_remainder_structure(ops8, sgrid8, steady_family):
    rem, _ = steady_family[0.01]
    g = ops8.grid
    s = ops8.tables.sqrt_mu
    up = g.vy > 0
    assert not np.any(rem.R1[0, up]) and not np.any(rem.R1[-1, ~up])
    assert np.array_equal(rem.remainder, rem.R1 + s * rem.R2)
    # composed trace meets the diffuse wall condition
    Mb, Mt = wall_maxwellian(ops8)
    r = rem.remainder
    assert np.max(np.abs(r[0, up] - outgoing_flux(r[0], ops8, -1) * Mb[up])) < 1e-9
    assert np.max(np.abs(r[-1, ~up] - outgoing_flux(r[-1], ops8, +1) * Mt[~up])) < 1e-9
    assert abs(_slab_mass(r, ops8, sgrid8)) < 1e-12
    assert abs(rem.mass_corrections[-1]) < 1e-9


def test_remainder_tail_and_uniform_bound(ops8, steady_family):
    # (1+|v|^2)^q sqrt(mu) peaks at |v|^2 = 4q - 1, beyond v_max/2 for q = 4, and
    # on this coarse grid already for q = 1, so the tail comparison is unweighted
    speed2 = ops8.grid.speed2
    outer = np.sqrt(speed2) >= ops8.grid.axis[-1] / 2
    sizes = []
    for alpha, (rem, _) in steady_family.items():
        r = np.abs(rem.remainder)
        assert r[:, outer].max() <= r[:, ~outer].max()
        sizes.append(np.abs(ops8.tables.w_q * rem.remainder).max())
    assert max(sizes) / min(sizes) < 2.0


def test_lagged_wall_update_agrees(ops8, sgrid8, g1_8, steady_family):
    rem, _ = steady_family[0.01]
    lag = solve_remainder(g1_8, ops8, sgrid8, 0.01, wall_update="lagged")
    assert _rel_change(lag.remainder, rem.remainder, ops8.tables.w_q) < 1e-8
    with pytest.raises(ValueError):
        solve_remainder(g1_8, ops8, sgrid8, 0.01, wall_update="never")


def test_stability_check(ops8):
    assert check_stability(ops8, 4, 0.01) > 0.5 * ops8.nu0
    with pytest.raises(StabilityError):
        check_stability(ops8, 6, 0.5)


def test_equilibrium_composition(ops8, sgrid8, g1_8):
    st = compose_steady(g1_8, None, 0.0, ops8, sgrid8)
    assert np.array_equal(st.F, np.broadcast_to(ops8.tables.mu, st.F.shape))
    res = steady_residual(st, ops8, sgrid8, subtract_floor=False)
    assert res.sup < 1e-12


def test_composed_state_is_positive_with_unit_mass(ops8, sgrid8, steady_family):
    mu_mass = _slab_mass(np.broadcast_to(ops8.tables.mu, (sgrid8.n_points, ops8.n_v)), ops8, sgrid8)
    for alpha, (_, st) in steady_family.items():
        assert st.positive and st.min_value > 0
        assert abs(st.mass - mu_mass) < 1e-12


def test_residual_tightens_with_tolerance(ops8, sgrid8, g1_8, steady_family):
    _, st = steady_family[0.01]
    tight = steady_residual(st, ops8, sgrid8).sup
    g1_loose = solve_G1(ops8, sgrid8, tol=1e-3)
    rem_loose = solve_remainder(g1_loose, ops8, sgrid8, 0.01, tol=1e-3)
    loose = steady_residual(compose_steady(g1_loose, rem_loose, 0.01, ops8, sgrid8), ops8, sgrid8).sup
    assert tight < loose


def test_residual_requires_alpha_for_arrays(ops8, sgrid8):
    with pytest.raises(ValueError):
        steady_residual(np.zeros((sgrid8.n_points, ops8.n_v)), ops8, sgrid8)


def test_remainder_needs_matching_grid(ops8, g1_8):
    with pytest.raises(ValueError):
        solve_remainder(g1_8, ops8, build_spatial_grid(10), 0.01)
