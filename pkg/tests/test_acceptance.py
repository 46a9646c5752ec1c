"""End-to-end acceptance checks; each prints one PASS/FAIL line before asserting."""

import math
import time

import numpy as np
import pytest

from couette_kinetic.collision import CollisionKernelSpec, assemble_operators, project_P0, weighted_Kcal_tail_norm
from couette_kinetic.diagnostics import bc_residual
from couette_kinetic.grid import build_spatial_grid, build_velocity_grid, eval_reference
from couette_kinetic.steady import compose_steady, g1_source, solve_G1, solve_remainder, steady_residual
from couette_kinetic.transport import (explicit_zero_inflow_solution, sample_bounce_cycle, survival_curve,
                                       weight_ratio_bound, weight_ratio_check)
from couette_kinetic.unsteady import (CaflischScheme, DirectScheme, cell_averages, match_mass, max_time_step,
                                      run_to_steady)

pytestmark = pytest.mark.acceptance

# 3 pi int_{-1}^{1} B0(z) z^2 (1 - z^2) dz with B0 = b_amp |z|, b_amp = 1/(2 pi),
# evaluated by scipy.integrate.quad
B0_ORACLE = 0.25


def test_uncoupled_transport_matches_quadrature_oracle(ops8, verdict):
    sg = build_spatial_grid(16)
    t0 = time.time()
    sol = solve_G1(ops8, sg, epsilons=(1e-8,), sigma=0.0)
    d = ops8.nu0 + 1e-8
    src = g1_source(ops8)
    err = 0.0
    for k in range(ops8.n_v):
        ref = explicit_zero_inflow_solution(lambda y, c=src[k]: c, d, sg.points, ops8.grid.nodes[k])
        err = max(err, float(np.max(np.abs(sol.values[:, k] - ref))))
    elapsed = time.time() - t0
    ok = err <= 1e-8 and elapsed <= 10.0
    verdict("criterion 1 transport oracle", ok, f"sup error {err:.2e} <= 1e-8, {elapsed:.1f} s <= 10 s")
    assert err <= 1e-8
    assert elapsed <= 10.0


def test_shear_eigenrelation_converges(kernel_cache, verdict):
    errs = {}
    for n in (20, 24):
        g = build_velocity_grid(n, 6.0)
        t = eval_reference(g, 0)
        ops = assemble_operators(g, t, CollisionKernelSpec(), 3.0, cache_dir=kernel_cache)
        assert ops.b0 == pytest.approx(B0_ORACLE, abs=1e-10)
        f = g.vx * g.vy * t.sqrt_mu
        ref = 2 * B0_ORACLE * f
        errs[n] = float(np.linalg.norm(ops.apply_L(f) - ref) / np.linalg.norm(ref))
    ok = errs[24] <= 5e-2 and errs[24] < errs[20]
    verdict("criterion 2 shear eigenrelation", ok,
            f"24^3 error {errs[24]:.4f} <= 0.05, 20^3 error {errs[20]:.4f}")
    assert errs[24] <= 5e-2
    assert errs[24] < errs[20]


def _smooth_random_density(grid, mu, rng):
    # mu (1 + sum_m a_m cos(k_m . v + phi_m)) with sum |a_m| <= 1/2, so 1/2 mu <= F <= 3/2 mu
    modes = 4
    a = rng.uniform(-1, 1, modes)
    a *= 0.5 / np.sum(np.abs(a))
    k = rng.standard_normal((modes, 3))
    k *= (rng.uniform(0.2, 1.0, modes) / np.linalg.norm(k, axis=1))[:, None]
    phase = rng.uniform(0, 2 * np.pi, modes)
    return mu * (1 + np.sum(a[:, None] * np.cos(k @ grid.nodes.T + phase[:, None]), axis=0))


def test_collision_invariants(ops6, ops8, verdict):
    worst = {}
    for ops in (ops6, ops8):
        g = ops.grid
        phis = np.stack([np.ones(g.size), g.vx, g.vy, g.vz, g.speed2])
        rng = np.random.default_rng(7)
        w = 0.0
        for _ in range(20):
            F = _smooth_random_density(g, ops.tables.mu, rng)
            Q = ops.collide_sym(F, conservative=False)
            defect = np.max(np.abs(g.weight * Q @ phis.T))
            w = max(w, defect / (g.weight * np.sum(F * F)))
        worst[g.n] = float(w)
    ok = worst[8] <= 1e-3 and worst[6] >= 2 * worst[8]
    verdict("criterion 3 collision invariants", ok,
            f"8^3 defect/|F|^2 {worst[8]:.3g} <= 1e-3, reduction 6^3->8^3 {worst[6] / worst[8]:.2f} >= 2")
    assert worst[8] <= 1e-3
    assert worst[6] >= 2 * worst[8]


def test_collision_frequency_is_constant(ops8, verdict):
    spread = float(np.ptp(ops8.nu_per_node) / ops8.nu0)
    mass = float(np.sum(ops8.grid.quad_weights * ops8.tables.mu))
    # nu0 = (angular integral 2 pi b_amp = 1) times the discrete mass of mu
    quad_tol = abs(mass - 1.0) + 1e-12
    dev = abs(ops8.nu0 - 1.0)
    ok = spread <= 1e-10 and dev <= quad_tol and abs(ops8.spec.angular_total - 1.0) < 1e-12
    verdict("criterion 4 nu0 constancy", ok, f"spread {spread:.1e} <= 1e-10, |nu0-1| {dev:.2e} <= {quad_tol:.2e}")
    assert spread <= 1e-10
    assert dev <= quad_tol


def test_G1_odd_with_vanishing_moments(ops8, g1_8, verdict):
    G = g1_8.values
    anti = float(np.max(np.abs(G + G[:, ops8.grid.flip_index(0)])))
    p = project_P0(G, ops8)
    moms = float(max(np.max(np.abs(p.a)), np.max(np.abs(p.b[..., 1:])), np.max(np.abs(p.c))))
    ok = anti == 0.0 and moms == 0.0
    verdict("criterion 5 G1 oddness", ok, f"antisymmetry defect {anti:.1e}, a,b2,b3,c max {moms:.1e}")
    assert anti == 0.0
    assert moms == 0.0


def test_kcal_tail_norm_decreases_in_q(kernel_cache, verdict):
    g = build_velocity_grid(10, 26.0)
    ops = assemble_operators(g, eval_reference(g, 0), CollisionKernelSpec(interpolation="plain"), 2.0,
                             conservative=False, cache_dir=kernel_cache)
    norms = [weighted_Kcal_tail_norm(ops, eval_reference(g, q), q) for q in (2, 3, 4, 5)]
    ok = all(b < a for a, b in zip(norms, norms[1:]))
    verdict("criterion 6 tail norm trend", ok, "q=2..5: " + ", ".join(f"{x:.3f}" for x in norms))
    assert ok


def test_cycle_survival_and_weight_ratio(verdict):
    rng = np.random.default_rng(11)
    n = 100_000
    k, surv, err = survival_curve(10.0, 40, n, rng)
    monotone = bool(np.all(np.diff(surv) <= 3 * np.maximum(err[1:], err[:-1])))
    alpha, q = 0.1, 4
    bound = weight_ratio_bound(q, alpha)
    worst = 0.0
    for _ in range(n):
        cyc = sample_bounce_cycle(10.0, 0.0, (0.0, 1.0, 0.0), alpha, rng)
        worst = max(worst, weight_ratio_check(cyc, q))
    ok = monotone and surv[-1] < 0.1 and worst <= bound
    verdict("criterion 7 bounce cycles", ok,
            f"monotone {monotone}, survival(40) {surv[-1]:.3g} < 0.1, "
            f"worst weight ratio {worst:.3f} <= bound {bound:.3f}")
    assert monotone and surv[-1] < 0.1
    assert worst <= bound


def test_steady_state_quality(ops8_q6, sgrid8, verdict):
    tol = 1e-10
    g1 = solve_G1(ops8_q6, sgrid8, tol=tol)
    res, states = {}, {}
    for alpha in (0.04, 0.02, 0.01):
        rem = solve_remainder(g1, ops8_q6, sgrid8, alpha, tol=tol)
        states[alpha] = compose_steady(g1, rem, alpha, ops8_q6, sgrid8)
        res[alpha] = steady_residual(states[alpha], ops8_q6, sgrid8).sup
    st = states[0.01]
    bc = max(bc_residual(st.F[0], ops8_q6.grid, -1), bc_residual(st.F[-1], ops8_q6.grid, +1))
    a = np.log([0.04, 0.02, 0.01])
    slope = float(np.polyfit(a, np.log([res[0.04], res[0.02], res[0.01]]), 1)[0])
    ok = st.min_value > 0 and bc <= 10 * tol and slope >= 2.5
    verdict("criterion 8 steady state", ok,
            f"min F_st {st.min_value:.2e} > 0, bc residual {bc:.1e} <= {10 * tol:.0e}, slope {slope:.2f} >= 2.5")
    assert st.min_value > 0
    assert bc <= 10 * tol
    assert slope >= 2.5


@pytest.fixture(scope="module")
def relaxation_runs(ops8, sgrid8, g1_8):
    out = {}
    dt = max_time_step(ops8, sgrid8, 0.01)
    t0 = time.time()
    for alpha in (0.01, 0.005):
        rem = solve_remainder(g1_8, ops8, sgrid8, alpha)
        F_st = cell_averages(compose_steady(g1_8, rem, alpha, ops8, sgrid8).F)
        F0 = F_st + 1e-3 * ops8.grid.vx * ops8.grid.vy * ops8.tables.mu
        out[alpha] = run_to_steady(F0, F_st, ops8, sgrid8, alpha, dt, 10.0)
    return out, time.time() - t0


def test_relaxation_to_steady_state(relaxation_runs, verdict):
    runs, elapsed = relaxation_runs
    fit, half = runs[0.01].fit, runs[0.005].fit
    low = min(min(r.record.min_value) for r in runs.values())
    ratio = half.rate / fit.rate
    ok = (fit.rate > 0 and fit.residual <= 0.05 and abs(ratio - 1) <= 0.2 and low >= -1e-10
          and elapsed <= 300)
    verdict("criterion 9 relaxation", ok,
            f"lambda0 {fit.rate:.3f} > 0, fit residual {fit.residual:.1%} <= 5%, "
            f"lambda0(alpha/2)/lambda0 {ratio:.3f} within 20%, min F {low:.1e} >= -1e-10, {elapsed:.0f} s <= 300 s")
    assert fit.rate > 0
    assert abs(ratio - 1) <= 0.2
    assert low >= -1e-10
    assert elapsed <= 300
    assert fit.residual <= 0.05


def test_split_scheme_matches_direct_scheme(ops8, sgrid8, steady_family, verdict):
    alpha = 0.01
    _, state = steady_family[alpha]
    F_st = cell_averages(state.F)
    dt = max_time_step(ops8, sgrid8, alpha)
    F0, _ = match_mass(F_st + 1e-3 * ops8.grid.vx * ops8.grid.vy * ops8.tables.mu, F_st, ops8, sgrid8)
    split = CaflischScheme(F0, F_st, ops8, sgrid8, alpha, dt)
    f2_initial = float(np.max(np.abs(split.state.f2)))
    direct = DirectScheme(F0, ops8, sgrid8, alpha, dt)
    for _ in range(int(round(2.0 / dt))):
        split.step()
        direct.step()
    diff = float(np.max(np.abs(split.F - direct.F)))
    allowed = 10 * (dt ** 2 + split.frame_discrepancy)
    ok = diff <= allowed and f2_initial == 0.0
    verdict("criterion 10 cross-scheme", ok,
            f"sup difference {diff:.2e} <= {allowed:.2e}, f2(0) max {f2_initial:.1e}")
    assert f2_initial == 0.0
    assert diff <= allowed


def test_conservation(ops8, relaxation_runs, verdict):
    runs, _ = relaxation_runs
    rates = []
    for r in runs.values():
        mass = np.array(r.record.mass)
        rates.append(float(np.max(np.abs(mass - mass[0]))) / r.record.times[-1])
    drift = max(rates)
    K = ops8.K_matrix
    sym = float(np.max(np.abs(K - K.T)) / np.max(np.abs(K)))
    ok = drift <= 1e-8 and sym <= 1e-10
    verdict("criterion 11 conservation", ok, f"mass drift {drift:.1e}/unit time <= 1e-8, K asymmetry {sym:.1e} <= 1e-10")
    assert drift <= 1e-8
    assert sym <= 1e-10
