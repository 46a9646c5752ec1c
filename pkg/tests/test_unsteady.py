import numpy as np
import pytest

from couette_kinetic.fields import Field
from couette_kinetic.grid import build_spatial_grid
from couette_kinetic.steady import solve_steady
from couette_kinetic.unsteady import (CaflischScheme, DecayRecord, InstabilityError, StepSizeError, Transport,
                                      cell_averages, cell_mass, collision_step, match_mass, max_time_step,
                                      perturbation_of, run_caflisch, run_direct, run_to_steady, step)

ALPHA = 0.01


@pytest.fixture(scope="module")
def setup6(ops6):
    sg = build_spatial_grid(8)
    _, _, state = solve_steady(ops6, sg, ALPHA)
    return ops6, sg, cell_averages(state.F), max_time_step(ops6, sg, ALPHA)


def test_time_step_limit(ops6):
    sg = build_spatial_grid(8)
    vmax = np.max(np.abs(ops6.grid.vy))
    assert max_time_step(ops6, sg, 0.0) == pytest.approx(sg.dy / vmax)
    assert max_time_step(ops6, sg, 100.0) == pytest.approx(ops6.grid.h / (100 * vmax))


def test_equilibrium_is_preserved(ops6):
    sg = build_spatial_grid(8)
    mu = np.broadcast_to(ops6.tables.mu, (sg.n_y, ops6.n_v)).copy()
    F = run_direct(mu, mu, ops6, sg, 0.0, 0.1, 2.0)
    assert np.max(np.abs(F - mu)) < 1e-17


def test_steady_state_drift_is_first_order_in_dy(ops6):
    drift = []
    for n_y in (8, 16):
        sg = build_spatial_grid(n_y)
        _, _, state = solve_steady(ops6, sg, ALPHA)
        F_st = cell_averages(state.F)
        dt = max_time_step(ops6, sg, ALPHA)
        F = run_direct(F_st, F_st, ops6, sg, ALPHA, dt, 2.0)
        drift.append(np.max(np.abs(F - F_st)))
    # the scheme is donor-cell in y; the drift stays far below |F_st - mu| ~ 2e-4
    assert drift[0] < 2e-5
    assert drift[1] < 0.6 * drift[0]


def test_transport_conserves_mass_and_positivity(setup6, rng):
    ops, sg, F_st, dt = setup6
    F = F_st * (1 + 0.5 * rng.uniform(-1, 1, F_st.shape))
    tr = Transport(ops, sg, ALPHA)
    out = tr(F, dt)
    assert abs(cell_mass(out, ops, sg) - cell_mass(F, ops, sg)) < 1e-15
    assert out.min() > -1e-12 * F.max()
    X = rng.uniform(0, 1, F.shape)
    assert abs(np.sum(tr.shear_step(X, dt)) - np.sum(X)) < 1e-12
    assert tr.shear_step(X, dt).min() >= 0


def test_collision_step_conserves_invariants(setup6, rng):
    ops, _, _, dt = setup6
    g = ops.grid
    dev = 0.1 * rng.uniform(-1, 1, (3, ops.n_v)) * ops.tables.mu
    out = collision_step(dev, ops, dt)
    phis = np.stack([np.ones(g.size), g.vx, g.vy, g.vz, g.speed2])
    assert np.allclose(out @ phis.T, dev @ phis.T, rtol=0, atol=1e-15)
    assert np.array_equal(collision_step(np.zeros(ops.n_v), ops, dt), np.zeros(ops.n_v))


def test_direct_run_conserves_mass_and_stays_positive(setup6):
    ops, sg, F_st, dt = setup6
    F0 = F_st + 1e-3 * ops.grid.vx * ops.grid.vy * ops.tables.mu
    res = run_to_steady(F0, F_st, ops, sg, ALPHA, dt, 3.0)
    mass = np.array(res.record.mass)
    assert np.max(np.abs(mass - mass[0])) <= 1e-8 * 3.0
    assert min(res.record.min_value) >= -1e-10
    assert res.record.as_array().shape == (res.steps + 1, len(DecayRecord.columns))


def test_mass_matching(setup6):
    ops, sg, F_st, _ = setup6
    F, defect = match_mass(1.01 * F_st, F_st, ops, sg)
    assert defect == pytest.approx(0.01 * cell_mass(F_st, ops, sg))
    assert cell_mass(F, ops, sg) == pytest.approx(cell_mass(F_st, ops, sg), rel=1e-14)


def test_run_errors(setup6):
    ops, sg, F_st, dt = setup6
    with pytest.raises(StepSizeError):
        run_to_steady(F_st, F_st, ops, sg, ALPHA, 2 * dt, 1.0)
    with pytest.raises(ValueError):
        run_to_steady(F_st, F_st, ops, sg, ALPHA, dt, 1.0, reference="other")
    with pytest.raises(ValueError):
        run_to_steady(F_st, F_st, ops, sg, ALPHA, dt, 1.0, scheme="other")
    F0 = F_st + 1e-3 * ops.grid.vx * ops.grid.vy * ops.tables.mu
    with pytest.raises(InstabilityError):
        run_to_steady(F0, F_st, ops, sg, ALPHA, dt, 1.0, blowup_factor=1e-3)


def test_split_scheme_with_equilibrium_data_stays_zero(ops6):
    sg = build_spatial_grid(8)
    mu = np.broadcast_to(ops6.tables.mu, (sg.n_y, ops6.n_v)).copy()
    res = run_caflisch(mu, mu, ops6, sg, 0.0, 0.05, 1.0)
    # only the rounding of the mass matching remains
    assert np.max(np.abs(res.state.total(ops6.tables.sqrt_mu))) < 1e-18


def test_split_scheme_starts_with_zero_weighted_part(setup6):
    ops, sg, F_st, dt = setup6
    F0 = F_st + 1e-3 * ops.grid.vx * ops.grid.vy * ops.tables.mu
    sch = CaflischScheme(F0, F_st, ops, sg, ALPHA, dt)
    assert not np.any(sch.state.f2)
    f1_0 = np.max(np.abs(sch.state.f1))
    sch.step()
    s = ops.tables.sqrt_mu
    assert np.max(np.abs(s * sch.state.f2)) <= dt * 10 * f1_0


def test_split_and_direct_schemes_agree(setup6):
    ops, sg, F_st, dt = setup6
    F0 = F_st + 1e-3 * ops.grid.vx * ops.grid.vy * ops.tables.mu
    split = run_caflisch(F0, F_st, ops, sg, ALPHA, dt, 1.0)
    direct = run_direct(F0, F_st, ops, sg, ALPHA, dt, 1.0)
    assert np.max(np.abs(split.F - direct)) <= 10 * (dt ** 2 * 1e-3 + split.frame_discrepancy)
    same = run_caflisch(F0, F_st, ops, sg, 0.0, dt, 1.0)
    assert np.max(np.abs(same.F - run_direct(F0, F_st, ops, sg, 0.0, dt, 1.0))) < 1e-15


def test_perturbation_helpers(setup6):
    ops, _, F_st, _ = setup6
    f = perturbation_of(F_st, F_st, ops)
    assert isinstance(f, Field) and not np.any(f.values)
    pts = np.arange(12.0)
    assert np.array_equal(cell_averages(pts), pts[1:-1])


def test_single_step_matches_run(setup6):
    ops, sg, F_st, dt = setup6
    assert np.array_equal(step(F_st, ops, sg, ALPHA, dt), run_direct(F_st, F_st, ops, sg, ALPHA, dt, dt))
