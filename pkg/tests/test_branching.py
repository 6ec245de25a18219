"""Split coefficient and system, mass decomposition, Galton-Watson surrogate."""

import math

import numpy as np
import pytest

from shelab.errors import DecompositionInfeasible, InsufficientDataError
from shelab.branching import (
    GWModel,
    gw_extinction,
    gw_mean,
    gw_model,
    gw_simulate,
    kernel_mass,
    mass_decompose,
    simulate_split_system,
    split_coefficient,
    split_sum_check,
)
from shelab.kernels import Domain, TestFunctionParams, dirichlet_kernel, phi
from shelab.solver import (
    FieldState,
    Nonlinearity,
    SolverConfig,
    bump_profile,
    grid_x,
    make_lattice,
    run_trajectory,
)

DOM = Domain(J=1.0)

GW_ORACLE_Q = 0.08737802538415  # smallest root of (0.5 + 0.5 q)^4 = q

SWEEP = [(1.2, 16, 1), (1.4, 32, 1), (1.5, 16, 1), (1.5, 8, 2), (1.6, 4, 1),
         (1.8, 8, 1), (1.8, 32, 1), (2.0, 8, 1), (2.0, 16, 1), (2.2, 8, 2),
         (2.5, 4, 1), (2.5, 16, 4)]


def small_cfg(nx=15, horizon=0.02, gamma=1.5, height=0.5, cutoff=1e6):
    lat = make_lattice(DOM, nx, horizon)
    return SolverConfig(dom=DOM, lattice=lat, nonlinearity=Nonlinearity(gamma),
                        u0=bump_profile(DOM, nx, height=height), cutoff=cutoff)


class TestSplitCoefficient:
    def test_zero_partner_is_power(self):
        x = np.linspace(0.0, 3.0, 50)
        for gamma in (1.1, 1.5, 2.0):
            assert np.array_equal(split_coefficient(x, np.zeros_like(x), gamma),
                                  x ** gamma)
        assert split_coefficient(2.0, 0.0, 1.5) == 2.0 ** 1.5

    def test_gamma_one_telescoping_pair(self):
        assert split_coefficient(1.0, 0.0, 1.0) ** 2 + \
            split_coefficient(1.0, 1.0, 1.0) ** 2 == pytest.approx(4.0, rel=1e-15)

    def test_telescoping_sum_random(self):
        rng = np.random.default_rng(5)
        for gamma in (1.1, 1.5, 2.0, 2.7):
            for n in (2, 3, 5, 8):
                u = rng.uniform(0.0, 4.0, size=(n, 40))
                s = np.zeros(40)
                total_sq = 0.0
                for i in range(n):
                    total_sq = total_sq + split_coefficient(u[i], s, gamma) ** 2
                    s = s + u[i]
                target = s ** (2.0 * gamma)
                assert np.all(np.abs(total_sq - target) <= 1e-12 * np.maximum(1.0, target))

    def test_monotone_in_first_argument(self):
        x = np.linspace(0.0, 5.0, 200)
        b = split_coefficient(x, np.full_like(x, 1.7), 1.5)
        assert np.all(np.diff(b) > 0)

    def test_cancellation_clamped(self):
        # x tiny against huge y: exact difference is positive but floats cancel
        out = split_coefficient(1e-13, 1e5, 1.5)
        assert out >= 0.0 and np.isfinite(out)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            split_coefficient(-1.0, 0.0, 1.5)
        with pytest.raises(ValueError):
            split_coefficient(np.array([1.0, 2.0]), np.array([0.0, -0.5]), 1.5)


class TestSplitSystem:
    def test_single_component_bit_identical(self):
        cfg = small_cfg()
        direct = run_trajectory(cfg, seed=9)
        sys_traj = simulate_split_system(cfg, 1, [cfg.u0], [9])
        assert np.array_equal(sys_traj.final_components[0], direct.final.values)
        assert sys_traj.status == direct.status
        assert sys_traj.clamp_counts[0] == direct.clamp_count
        assert sys_traj.n_steps == direct.n_steps

    def test_telescoping_along_trajectory(self):
        cfg = small_cfg()
        parts = [cfg.u0 * w for w in (0.5, 0.3, 0.2)]
        sys_traj = simulate_split_system(cfg, 3, parts, [1, 2, 3])
        assert sys_traj.telescope_residual <= 1e-12

    def test_mass_series_shape_and_start(self):
        cfg = small_cfg()
        parts = [cfg.u0 * 0.5, cfg.u0 * 0.5]
        sys_traj = simulate_split_system(cfg, 2, parts, [4, 5], snapshot_every=7)
        assert sys_traj.component_mass.shape == (2, cfg.lattice.nt + 1)
        assert sys_traj.component_mass[0, 0] == pytest.approx(
            cfg.lattice.dx * parts[0].sum(), rel=1e-15)
        assert sys_traj.sum_snapshots[0].time == 0.0

    def test_cutoff_stops_system(self):
        cfg = small_cfg(cutoff=0.52)
        parts = [cfg.u0 * 0.5, cfg.u0 * 0.5]
        sys_traj = simulate_split_system(cfg, 2, parts, [6, 7])
        assert sys_traj.status == "cutoff_hit"
        assert sys_traj.status_time is not None
        assert sys_traj.n_steps < cfg.lattice.nt
        assert sys_traj.component_mass.shape[1] == sys_traj.n_steps + 1

    def test_decoupled_mode_skips_identity(self):
        cfg = small_cfg()
        parts = [cfg.u0 * 0.5, cfg.u0 * 0.5]
        sys_traj = simulate_split_system(cfg, 2, parts, [1, 2], decoupled=True)
        assert sys_traj.telescope_residual == 0.0

    def test_validation(self):
        cfg = small_cfg()
        with pytest.raises(ValueError):
            simulate_split_system(cfg, 2, [cfg.u0], [1, 2])
        with pytest.raises(ValueError):
            simulate_split_system(cfg, 2, [cfg.u0, cfg.u0], [1, 2])  # sums to 2 u0
        with pytest.raises(ValueError):
            simulate_split_system(cfg, 1, [-cfg.u0], [1])
        bad = SolverConfig(dom=DOM, lattice=cfg.lattice,
                           nonlinearity=Nonlinearity(1.5, g=lambda u: u ** 1.5),
                           u0=cfg.u0)
        with pytest.raises(ValueError):
            simulate_split_system(bad, 1, [bad.u0], [1])

    def test_sum_check_passes_and_control_fails(self):
        cfg = small_cfg()
        rep = split_sum_check(cfg, 2, 1000, seed=31)
        assert rep["all_pass"]
        assert len(rep["statistics"]) == 4
        control = split_sum_check(cfg, 2, 1000, seed=31, negative_control=True)
        assert not control["all_pass"]

    def test_sum_check_needs_paths(self):
        with pytest.raises(InsufficientDataError):
            split_sum_check(small_cfg(), 2, 999)


def flat_profile(n_parts, total_weighted, nx=199, J=20.0, T=1e4):
    dx = J / (nx + 1)
    x = dx * np.arange(1, nx + 1)
    w = np.asarray(phi(0.0, x, TestFunctionParams(T=T, center=J / 2)))
    level = total_weighted / (dx * w.sum())
    return FieldState(time=0.0, values=np.full(nx, level), dx=dx), \
        TestFunctionParams(T=T, center=J / 2)


class TestMassDecompose:
    def test_single_part_is_whole_profile(self):
        nx = 127
        dom = Domain(J=20.0)
        dx = dom.J / (nx + 1)
        x = grid_x(dom, nx)
        values = 40.0 * np.exp(-((x - 14.0) ** 2) / 0.5)
        f0 = FieldState(time=0.0, values=values, dx=dx)
        p = TestFunctionParams(T=2.0, center=10.0)
        res = mass_decompose(f0, p, 1)
        assert np.array_equal(res.parts[0], values)
        centroid = float(np.dot(x, values) / values.sum())
        assert res.centers[0] == pytest.approx(centroid, rel=1e-12)
        assert res.scores[0] >= 2.0

    def test_flat_profile_quantile_slabs(self):
        n = 5
        f0, p = flat_profile(n, total_weighted=2.0 * n)
        res = mass_decompose(f0, p, n, threshold=1.9)
        assert len(res.parts) == n
        recon = np.sum(res.parts, axis=0)
        assert np.array_equal(recon, f0.values)
        assert all(s >= 1.9 for s in res.scores)
        assert np.mean(res.scores) == pytest.approx(2.0, rel=0.02)
        assert all(1.0 <= z <= 19.0 for z in res.centers)

    def test_conservation_and_threshold_random(self):
        rng = np.random.default_rng(17)
        dom = Domain(J=20.0)
        nx = 255
        dx = dom.J / (nx + 1)
        x = grid_x(dom, nx)
        p = TestFunctionParams(T=1e4, center=10.0)
        peak = float(phi(0.0, 10.0, p))
        for _ in range(20):
            n = int(rng.integers(1, 6))
            u = np.zeros(nx)
            for _ in range(n):
                c = rng.uniform(2.0, 18.0)
                width = rng.uniform(0.2, 1.0)
                u += np.exp(-((x - c) ** 2) / (2 * width ** 2))
            # scale so the total weighted mass leaves a comfortable margin
            u *= 2.5 * n / (dx * peak * u.sum())
            f0 = FieldState(time=0.0, values=u, dx=dx)
            res = mass_decompose(f0, p, n)
            assert np.array_equal(np.sum(res.parts, axis=0), u)
            assert all(s >= 2.0 for s in res.scores)
            assert all(np.all(part >= 0) for part in res.parts)

    def test_infeasible_reports_zero(self):
        f0, p = flat_profile(1, total_weighted=1.0)
        with pytest.raises(DecompositionInfeasible) as err:
            mass_decompose(f0, p, 5)
        assert err.value.achievable == 0

    def test_achievable_is_sharp(self):
        f0, p = flat_profile(3, total_weighted=7.0)
        with pytest.raises(DecompositionInfeasible) as err:
            mass_decompose(f0, p, 5)
        a = err.value.achievable
        assert a == 3
        assert len(mass_decompose(f0, p, a).parts) == a
        with pytest.raises(DecompositionInfeasible):
            mass_decompose(f0, p, a + 1)

    def test_validation(self):
        f0, p = flat_profile(1, total_weighted=4.0)
        with pytest.raises(ValueError):
            mass_decompose(f0, p, 0)
        with pytest.raises(ValueError):
            mass_decompose(f0, p, 1, threshold=0.0)
        bad = FieldState(time=0.0, values=np.array([1.0, -0.2, 0.5]), dx=5.0)
        with pytest.raises(ValueError):
            mass_decompose(bad, p, 1)
        tiny = FieldState(time=0.0, values=np.ones(3), dx=0.25)  # J = 1 < 2
        with pytest.raises(ValueError):
            mass_decompose(tiny, p, 1)


class TestKernelMass:
    def test_spike_reads_kernel(self):
        dom = Domain(J=4.0)
        nx = 63
        dx = dom.J / (nx + 1)
        j = 20
        u = np.zeros(nx)
        u[j] = 1.0 / dx
        st = FieldState(time=0.0, values=u, dx=dx)
        x_j = dx * (j + 1)
        got = kernel_mass(st, 0.3, 1.7, dom)
        assert got == pytest.approx(float(dirichlet_kernel(0.3, 1.7, x_j, dom)), rel=1e-12)

    def test_vector_evaluation(self):
        dom = Domain(J=4.0)
        nx = 31
        dx = dom.J / (nx + 1)
        st = FieldState(time=0.0, values=np.ones(nx), dx=dx)
        out = kernel_mass(st, 0.5, np.array([1.0, 2.0, 3.0]), dom)
        assert out.shape == (3,)
        assert np.all(out > 0)


class TestGWMean:
    def test_critical_exponent_exact_one(self):
        for L in (2.0, 4.0, 16.0, 128.0, 1000.0):
            assert gw_mean(1.5, L).heuristic == 1.0

    def test_bound_plug_in(self):
        res = gw_mean(2.0, 128.0, 1.0)
        assert res.bound == pytest.approx(2.0, rel=1e-12)
        assert res.bound_supercritical

    def test_subcritical_bound_decreasing(self):
        vals = [gw_mean(1.3, L).bound for L in (4.0, 8.0, 16.0, 64.0)]
        assert all(b > a for a, b in zip(vals[1:], vals))
        assert not gw_mean(1.3, 64.0).bound_supercritical

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            gw_mean(1.0, 4.0)
        with pytest.raises(ValueError):
            gw_mean(1.5, 1.0)
        with pytest.raises(ValueError):
            gw_mean(1.5, 4.0, 0.0)


class TestGWModel:
    def test_offspring_counts(self):
        assert gw_model(1.4, 32).n_offspring == 16
        assert gw_model(1.5, 16).n_offspring == 16
        assert gw_model(2.0, 8).n_offspring == 64
        assert gw_model(2.2, 8, 2).n_offspring == 73
        assert gw_model(1.2, 2).n_offspring >= 1

    def test_ruin_probability(self):
        assert gw_model(1.5, 16).p == pytest.approx(1.0 / 30.0, rel=1e-15)

    def test_invariants(self):
        with pytest.raises(ValueError):
            GWModel(p=1.2, n_offspring=3)
        with pytest.raises(ValueError):
            GWModel(p=0.5, n_offspring=0)
        with pytest.raises(ValueError):
            GWModel(p=0.5, n_offspring=2, offspring_law="poisson")
        assert GWModel(p=0.0, n_offspring=2).mean == 0.0


class TestGWExtinction:
    def test_binomial_oracle(self):
        q = gw_extinction(GWModel(p=0.5, n_offspring=4))
        assert q == pytest.approx(GW_ORACLE_Q, abs=1e-11)
        # fixed-point property
        assert (0.5 + 0.5 * q) ** 4 == pytest.approx(q, abs=1e-11)

    def test_subcritical_and_critical(self):
        assert gw_extinction(GWModel(p=0.2, n_offspring=3)) == 1.0
        assert gw_extinction(GWModel(p=0.5, n_offspring=2)) == 1.0

    def test_deterministic_line(self):
        assert gw_extinction(GWModel(p=1.0, n_offspring=1)) == 0.0

    def test_survival_iff_supercritical_sweep(self):
        for gamma, L, K in SWEEP:
            model = gw_model(gamma, L, K)
            q = gw_extinction(model)
            assert (q < 1.0) == (model.mean > 1.0)


class TestGWSimulate:
    def test_deterministic_line_survives(self):
        res = gw_simulate(GWModel(p=1.0, n_offspring=1), 50, 200, seed=1)
        assert res.survival_frequency == 1.0

    def test_dead_law_dies_immediately(self):
        res = gw_simulate(GWModel(p=0.0, n_offspring=3), 1, 200, seed=1)
        assert res.survival_frequency == 0.0

    def test_matches_fixed_point(self):
        model = GWModel(p=0.5, n_offspring=4)
        res = gw_simulate(model, 50, 10 ** 5, seed=3)
        target = 1.0 - gw_extinction(model)
        se = math.sqrt(target * (1.0 - target) / 10 ** 5)
        assert abs(res.survival_frequency - target) <= 3 * se
        assert res.ci_low < target < res.ci_high

    def test_cap_flagged_for_explosive_model(self):
        model = gw_model(2.5, 16, 4)  # mean ~ 34
        res = gw_simulate(model, 30, 500, seed=4)
        assert res.n_capped > 0
        assert res.survival_frequency >= res.n_capped / 500

    def test_seed_determinism(self):
        model = GWModel(p=0.3, n_offspring=5)
        a = gw_simulate(model, 40, 2000, seed=9)
        b = gw_simulate(model, 40, 2000, seed=9)
        assert a == b
