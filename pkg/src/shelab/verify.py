"""Named verification suites behind the `verify` command.

Each suite bundles the checks that guard one construction and returns a
plain dict: a list of named checks with a boolean `pass` plus the numbers
behind the verdict, and an `all_pass` roll-up.  With `negative_control=True`
a suite reruns its load-bearing comparison against a deliberately corrupted
ingredient (wrong constant, missing correction, decoupled noise, ...); a
healthy build then fails, which demonstrates the check has teeth.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
from scipy.integrate import quad

from .branching import (
    gw_extinction,
    gw_mean,
    gw_model,
    gw_simulate,
    simulate_split_system,
    split_sum_check,
)
from .kernels import (
    Domain,
    TestFunctionParams,
    dirichlet_kernel,
    jensen_constants,
    phi,
    phi_l1_norm,
    phi_ratio,
)
from .martingale import jensen_chain_check, jensen_equality_field
from .noise import LatticeSpec, sample_noise, zero_noise
from .passage import (
    RuinProblem,
    brownian_stepper,
    first_passage_mc,
    horizon,
    mass_path_matrix,
    reflection_tail,
    ruin_probability_analytic,
)
from .scaling import ScalingMap, scaling_consistency_check, scaling_distribution_check
from .solver import (
    FieldState,
    Nonlinearity,
    SolverConfig,
    bump_profile,
    grid_x,
    make_lattice,
    mild_solution_step_check,
    run_trajectory,
    step_values,
)

SUITES = ("jensen", "ruin", "scaling", "splitting", "gw", "mild")

# frozen oracle (quadrature, recorded before the implementation existed)
C1_GAMMA_15 = 0.099735570100

# (gamma, L, K) sweep with offspring means well clear of criticality on
# both sides; the last entry is explosive enough to exercise the population cap.
GW_SWEEP = (
    (1.2, 16.0, 1.0),
    (1.4, 32.0, 1.0),
    (1.5, 16.0, 1.0),
    (1.5, 8.0, 2.0),
    (1.6, 4.0, 1.0),
    (1.8, 8.0, 1.0),
    (1.8, 32.0, 1.0),
    (2.0, 8.0, 1.0),
    (2.0, 16.0, 1.0),
    (2.2, 8.0, 2.0),
    (2.5, 4.0, 1.0),
    (2.5, 16.0, 4.0),
)


def _check(name: str, ok: bool, **detail) -> dict:
    out = {"name": name, "pass": bool(ok)}
    out.update(detail)
    return out


def _finish(suite: str, checks: list[dict], t0: float, *, negative_control: bool,
            recorded: list[dict] | None = None) -> dict:
    rep = {
        "suite": suite,
        "negative_control": negative_control,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }
    if recorded is not None:
        rep["recorded"] = recorded
    return rep


def _field_corpus(rng: np.random.Generator, x: np.ndarray, n: int):
    """Nonnegative fields: bump mixtures, rough additive noise, sparse cuts."""
    for _ in range(n):
        u = np.zeros_like(x)
        for _ in range(int(rng.integers(1, 4))):
            c = rng.uniform(x[0], x[-1])
            w = rng.uniform(0.02, 0.3)
            u += rng.uniform(0.1, 5.0) * np.exp(-((x - c) ** 2) / (2.0 * w * w))
        if rng.random() < 0.3:
            u += rng.exponential(0.5, x.size)
        if rng.random() < 0.2:
            u[rng.random(x.size) < 0.5] = 0.0
        yield u


def suite_jensen(*, negative_control: bool = False, seed: int = 0,
                 fields_per_gamma: int = 1000) -> dict:
    t0 = time.perf_counter()
    checks = []
    dom = Domain(J=1.0)
    nx = 1024
    x = grid_x(dom, nx)
    dx = dom.J / (nx + 1)
    p = TestFunctionParams(T=0.01, center=0.5)
    rng = np.random.default_rng(seed)

    worst = np.inf
    n_bad = 0
    n_fields = 0
    for gamma in (1.1, 1.5, 2.0):
        consts = jensen_constants(gamma)
        if negative_control:
            # a 4x-too-large constant flips the sign on the equality-case field
            consts = dataclasses.replace(consts, c1=4.0 * consts.c1)
        eq = jensen_equality_field(p, x, consts, t=0.0)
        for i, u in enumerate(_field_corpus(rng, x, fields_per_gamma)):
            if i == 0:
                u, t = eq, 0.0
            else:
                t = float(rng.uniform(0.0, 0.99 * p.T))
            state = FieldState(time=t, values=u, dx=dx)
            lhs, _, margin = jensen_chain_check(state, p, consts)
            norm = margin / lhs if lhs > 0 else 0.0
            worst = min(worst, norm)
            n_bad += norm < -1e-6
            n_fields += 1
    checks.append(_check("margin_corpus", n_bad == 0, fields=n_fields,
                         worst_margin_over_lhs=worst, n_bad=int(n_bad)))

    defect = 0.0
    for gamma in np.linspace(1.000001, 4.0, 50):
        c = jensen_constants(float(gamma))
        defect = max(defect,
                     abs((2.0 - c.a) / (2.0 * gamma) + c.a - 1.0),
                     abs((1.0 - c.a) / 2.0 * (1.0 - 2.0 * gamma) + 0.5))
    checks.append(_check("exponent_identities", defect <= 1e-14, max_defect=defect))

    c15 = jensen_constants(1.5).c1
    checks.append(_check("c1_frozen_value", abs(c15 - C1_GAMMA_15) <= 1e-10,
                         c1=c15, oracle=C1_GAMMA_15))

    ts = np.linspace(0.0, 1.0, 401)
    xs = np.linspace(-10.0, 10.0, 801)
    inf_ratio = min(float(np.min(phi_ratio(t, xs, 1.0))) for t in ts)
    checks.append(_check("ratio_infimum", abs(inf_ratio - 2.0 ** -0.5) <= 1e-9,
                         infimum=inf_ratio, target=2.0 ** -0.5))

    l1_gap = 0.0
    for a in (0.3, 0.5, 1.0, 1.7):
        for frac in (0.0, 0.5, 1.0):
            t, big_t = frac * 1.0, 1.0
            closed = phi_l1_norm(t, big_t, a)
            val, _ = quad(lambda z: phi(t, z, TestFunctionParams(T=big_t)) ** a,
                          -np.inf, np.inf)
            l1_gap = max(l1_gap, abs(closed - val))
    checks.append(_check("l1_closed_form_vs_quadrature", l1_gap <= 1e-8,
                         max_gap=l1_gap))

    return _finish("jensen", checks, t0, negative_control=negative_control)


def suite_ruin(*, negative_control: bool = False, seed: int = 0,
               n_paths: int = 100_000) -> dict:
    t0 = time.perf_counter()
    checks = []
    # without the bridge correction the coarse-step estimator is biased by
    # tens of standard errors, so the corrupted run cannot sneak through
    dt = 0.25 if negative_control else 0.02
    bridge = not negative_control
    for upper in (3.0, 5.0, 10.0):
        prob = RuinProblem(upper=upper)
        target = ruin_probability_analytic(prob)
        res = first_passage_mc(brownian_stepper, prob, n_paths,
                               seed=seed + int(upper), dt=dt, bridge=bridge)
        se = float(np.sqrt(target * (1.0 - target) / res.n_paths))
        dev = (res.hit_upper_fraction - target) / se
        checks.append(_check(f"brownian_ruin_L{int(upper)}", abs(dev) <= 3.0,
                             estimate=res.hit_upper_fraction, analytic=target,
                             deviation_se=dev, timeout_fraction=res.timeout_fraction))

    rng = np.random.default_rng(seed + 100)
    bound_ok = True
    for _ in range(1000):
        c = float(rng.uniform(0.05, 3.0))
        s = float(rng.uniform(0.05, 4.0))
        value, bound = reflection_tail(c, s)
        bound_ok &= value <= bound + 1e-12
    checks.append(_check("reflection_bound_dominates", bound_ok, samples=1000))

    mc_ok = True
    worst_mc = 0.0
    for k, (c, s) in enumerate([(0.5, 1.0), (1.0, 0.25), (2.0, 3.0)]):
        central, _ = reflection_tail(c, s)
        g = np.random.default_rng(seed + 200 + k)
        # running max of a Brownian path has the law of |B_s|
        est = float(np.mean(np.abs(g.normal(0.0, np.sqrt(s), 100_000)) < c))
        se = float(np.sqrt(central * (1.0 - central) / 100_000))
        dev = abs(est - central) / se
        worst_mc = max(worst_mc, dev)
        mc_ok &= dev <= 3.0
    checks.append(_check("reflection_monte_carlo", mc_ok, worst_deviation_se=worst_mc))

    consts = jensen_constants(1.5)
    t10 = horizon(10.0, consts)
    octic = horizon(20.0, consts) / t10
    checks.append(_check("horizon_octic_growth",
                         abs(t10 - 16.0 * consts.c1 ** -2 * 1e8) <= 1e-3 * t10
                         and abs(octic - 256.0) <= 1e-9,
                         horizon_L10=t10, doubling_ratio=octic))

    # lattice mass-process passage frequencies, recorded (not gated): the
    # analytic number is a continuum bound, not the lattice law
    dom = Domain(J=1.0)
    nx = 31
    lat = make_lattice(dom, nx, 0.02)
    cfg = SolverConfig(dom=dom, lattice=lat, nonlinearity=Nonlinearity(1.5),
                       u0=bump_profile(dom, nx, height=1.0))
    prob = RuinProblem(upper=2.5, start=2.0, lower=1.5, horizon=lat.nt * lat.dt)
    p_test = TestFunctionParams(T=lat.nt * lat.dt, center=0.5)
    mat = mass_path_matrix(cfg, p_test, seed + 300, 200)
    res = first_passage_mc(mat, prob, 200, dt=lat.dt)
    recorded = [{
        "experiment": "mass_process_passage",
        "gamma": 1.5, "upper": prob.upper, "lower": prob.lower, "nx": nx,
        "n_paths": res.n_paths,
        "hit_upper_fraction": res.hit_upper_fraction,
        "ci_low": res.ci_low, "ci_high": res.ci_high,
        "timeout_fraction": res.timeout_fraction,
        "analytic_two_sided": ruin_probability_analytic(prob),
    }]

    return _finish("ruin", checks, t0, negative_control=negative_control,
                   recorded=recorded)


def suite_scaling(*, negative_control: bool = False, seed: int = 0,
                  n_paths: int = 1000) -> dict:
    t0 = time.perf_counter()
    checks = []
    dom = Domain(J=1.0)

    def cfg_at(nx: int, horizon_t: float, height: float, levels=()) -> SolverConfig:
        lat = make_lattice(dom, nx, horizon_t)
        return SolverConfig(dom=dom, lattice=lat, nonlinearity=Nonlinearity(1.5),
                            u0=bump_profile(dom, nx, height=height), levels=levels)

    map2 = ScalingMap(lbar=2.0, gamma=1.5)
    res_coarse = scaling_consistency_check(cfg_at(31, 0.004, 0.8), map2, seed)
    res_fine = scaling_consistency_check(cfg_at(63, 0.004, 0.8), map2, seed)
    checks.append(_check("scheme_commutes_exactly",
                         res_coarse.scheme_residual <= 1e-12,
                         scheme_residual=res_coarse.scheme_residual))
    ratio = res_coarse.continuum_residual / res_fine.continuum_residual
    checks.append(_check("continuum_residual_shrinks", ratio >= 3.0,
                         coarse=res_coarse.continuum_residual,
                         fine=res_fine.continuum_residual, ratio=ratio))

    rep = scaling_distribution_check(cfg_at(15, 0.02, 0.5, levels=(0.52,)),
                                     map2, n_paths, seed=seed + 12,
                                     negative_control=negative_control)
    checks.append(_check("distribution_match", rep["all_pass"],
                         n_paths=n_paths,
                         bonferroni_alpha=rep["bonferroni_alpha"],
                         min_p_value=min(s["p_value"] for s in rep["statistics"]),
                         statistics=rep["statistics"]))

    return _finish("scaling", checks, t0, negative_control=negative_control)


def suite_splitting(*, negative_control: bool = False, seed: int = 0,
                    n_paths: int = 1000) -> dict:
    t0 = time.perf_counter()
    checks = []
    dom = Domain(J=1.0)
    nx = 15
    lat = make_lattice(dom, nx, 0.02)
    cfg = SolverConfig(dom=dom, lattice=lat, nonlinearity=Nonlinearity(1.5),
                       u0=bump_profile(dom, nx, height=0.5))

    parts = [w * cfg.u0 for w in (0.5, 0.3, 0.2)]
    st = simulate_split_system(cfg, 3, parts, seeds=[seed + 1, seed + 2, seed + 3])
    checks.append(_check("telescoping_identity", st.telescope_residual <= 1e-12,
                         residual=st.telescope_residual, components=3))

    single = simulate_split_system(cfg, 1, [cfg.u0], seeds=[seed + 9])
    direct = run_trajectory(dataclasses.replace(cfg), seed + 9, stream=0)
    bitwise = (np.array_equal(single.final_components[0], direct.final.values)
               and single.status == direct.status
               and single.n_steps == direct.n_steps)
    checks.append(_check("single_component_bitwise", bitwise,
                         n_steps=single.n_steps))

    rep = split_sum_check(cfg, 2, n_paths, seed=seed + 31,
                          negative_control=negative_control)
    checks.append(_check("sum_distribution_match", rep["all_pass"],
                         n_paths=n_paths,
                         bonferroni_alpha=rep["bonferroni_alpha"],
                         min_p_value=min(s["p_value"] for s in rep["statistics"]),
                         statistics=rep["statistics"]))

    return _finish("splitting", checks, t0, negative_control=negative_control)


def suite_gw(*, negative_control: bool = False, seed: int = 0,
             n_trees: int = 20_000, generations: int = 256) -> dict:
    t0 = time.perf_counter()
    checks = []

    exact = [gw_mean(1.5, level, 1.0).heuristic for level in (4.0, 8.0, 16.0, 32.0, 64.0)]
    checks.append(_check("offspring_mean_exact_one_at_three_halves",
                         all(v == 1.0 for v in exact), values=exact))

    sweep_rows = []
    match_ok = True
    phase_ok = True
    for k, (gamma, level, k_const) in enumerate(GW_SWEEP):
        model = gw_model(gamma, level, k_const)
        q = gw_extinction(model)
        target_model = model
        if negative_control:
            # wrong survival target from a model with 1.5x the offspring success
            target_model = dataclasses.replace(model, p=min(1.0, 1.5 * model.p))
        target = 1.0 - gw_extinction(target_model)
        sim = gw_simulate(model, generations, n_trees, seed + 500 + k)
        se = float(np.sqrt(target * (1.0 - target) / n_trees))
        if se == 0.0:
            ok = sim.survival_frequency == target
            dev = 0.0 if ok else np.inf
        else:
            dev = (sim.survival_frequency - target) / se
            ok = abs(dev) <= 3.0
        match_ok &= ok
        phase_ok &= (q < 1.0) == (model.mean > 1.0)
        phase_ok &= (sim.survival_frequency > 0.0) == (model.mean > 1.0)
        sweep_rows.append({"gamma": gamma, "L": level, "K": k_const,
                           "p": model.p, "N": model.n_offspring,
                           "mean": model.mean, "extinction": q,
                           "simulated_survival": sim.survival_frequency,
                           "deviation_se": dev, "n_capped": sim.n_capped,
                           "pass": bool(ok)})
    checks.append(_check("fixed_point_matches_simulation", match_ok,
                         n_trees=n_trees, generations=generations,
                         sweep=sweep_rows))
    checks.append(_check("survival_iff_supercritical", phase_ok,
                         points=len(GW_SWEEP)))

    return _finish("gw", checks, t0, negative_control=negative_control)


def _smoothing_gap(cfg: SolverConfig, reference_factor: float = 1.0) -> float:
    """Zero-noise final state against the kernel-smoothed initial profile."""
    lat = cfg.lattice
    x = grid_x(cfg.dom, lat.nx)
    v = cfg.u0.copy()
    zeros = np.zeros(lat.nx)
    for _ in range(lat.nt):
        v, _ = step_values(v, zeros, lat.dt, lat.dx, cfg.nonlinearity)
    k = dirichlet_kernel(lat.nt * lat.dt, x[:, None], x[None, :], cfg.dom)
    ref = reference_factor * lat.dx * (k @ cfg.u0)
    return float(np.max(np.abs(v - ref)) / (1.0 + float(np.max(np.abs(ref)))))


def suite_mild(*, negative_control: bool = False, seed: int = 0,
               n_seeds: int = 8) -> dict:
    t0 = time.perf_counter()
    checks = []
    dom = Domain(J=1.0)
    # 4x in nx per level: adjacent nx would leave the stochastic means
    # separated by well under their seed-to-seed spread
    levels = (15, 63, 255)

    def cfg_at(nx: int) -> SolverConfig:
        lat = make_lattice(dom, nx, 0.004)
        return SolverConfig(dom=dom, lattice=lat, nonlinearity=Nonlinearity(1.5),
                            u0=bump_profile(dom, nx, height=1.0))

    means = []
    for nx in levels:
        cfg = cfg_at(nx)
        t_end = cfg.lattice.nt * cfg.lattice.dt
        vals = [mild_solution_step_check(cfg, sample_noise(cfg.lattice, seed, s),
                                         t_end).residual
                for s in range(n_seeds)]
        means.append(float(np.mean(vals)))
    decreasing = means[0] > means[1] > means[2]
    checks.append(_check("stochastic_residual_decreases", decreasing,
                         levels=list(levels), mean_residuals=means,
                         seeds_per_level=n_seeds))

    factor = 1.02 if negative_control else 1.0
    det = [_smoothing_gap(cfg_at(nx), reference_factor=factor) for nx in levels]
    ratios = [det[i] / det[i + 1] for i in range(len(det) - 1)]
    checks.append(_check("zero_noise_first_order", all(r >= 3.0 for r in ratios),
                         residuals=det, refinement_ratios=ratios))

    return _finish("mild", checks, t0, negative_control=negative_control)


_SUITE_FNS = {
    "jensen": suite_jensen,
    "ruin": suite_ruin,
    "scaling": suite_scaling,
    "splitting": suite_splitting,
    "gw": suite_gw,
    "mild": suite_mild,
}


def run_suite(name: str, *, negative_control: bool = False, seed: int = 0) -> dict:
    """One suite by name, or `all` for the full battery."""
    if name == "all":
        t0 = time.perf_counter()
        reports = [_SUITE_FNS[s](negative_control=negative_control, seed=seed)
                   for s in SUITES]
        return {
            "suite": "all",
            "negative_control": negative_control,
            "suites": reports,
            "all_pass": all(r["all_pass"] for r in reports),
            "elapsed_s": round(time.perf_counter() - t0, 3),
        }
    if name not in _SUITE_FNS:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    return _SUITE_FNS[name](negative_control=negative_control, seed=seed)
