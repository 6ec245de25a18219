"""Noise splitting, mass decomposition, and the branching-process surrogate.

A solution driven by one white noise can be decomposed into N coupled
components u¹..u^N driven by independent noises, component i carrying the
coefficient b(uⁱ, S_{i-1}) = sqrt((uⁱ+S_{i-1})^{2γ} - S_{i-1}^{2γ}) with
S_{i-1} the sum of the earlier components; the squares telescope, so the sum
ũ = Σuⁱ solves the original equation.  Each component's mass then plays an
independent ruin game, giving a Galton-Watson skeleton for mass growth:
success probability p = 1/(2(L-1)) per component and N = K⁻¹L^{2(γ-1)}
components per success, supercritical exactly when γ > 3/2 in the heuristic
count.  This module implements the coefficient, the coupled lattice system,
the partition of an initial profile into threshold-mass pieces, and the
Galton-Watson surrogate with its fixed-point and simulation oracles.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import stats as sps

from .errors import DecompositionInfeasible, InsufficientDataError
from .kernels import TestFunctionParams, dirichlet_kernel, phi
from .noise import _generator, increment_stream
from .solver import (
    COMPLETED,
    CUTOFF_HIT,
    NUMERICAL_FAILURE,
    FieldState,
    SolverConfig,
    grid_x,
    run_trajectory,
    step_values,
)
from .util import wilson_ci

_POP_CAP = 10 ** 7


# -- splitting ---------------------------------------------------------------

def split_coefficient(x, y, gamma: float):
    """b(x, y) = sqrt((x+y)^{2γ} - y^{2γ}) for x, y >= 0.

    The y = 0 cells evaluate as x^γ directly, which keeps the one-component
    system bit-identical to the plain solver; the general branch clamps the
    cancellation residue at 0 before the square root.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scalar = x.ndim == 0 and y.ndim == 0
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("split coefficient needs nonnegative arguments")
    tg = 2.0 * gamma
    with np.errstate(invalid="ignore"):
        general = np.sqrt(np.maximum((x + y) ** tg - y ** tg, 0.0))
    out = np.where(y == 0.0, x ** gamma, general)
    return float(out) if scalar else out


@dataclasses.dataclass(frozen=True)
class SplitSystemTrajectory:
    """Coupled components on one lattice: per-component mass series, the
    worst pointwise telescoping defect seen along the run, and the usual
    termination bookkeeping (status refers to the summed field)."""

    n: int
    status: str
    status_time: float | None
    n_steps: int
    times: np.ndarray
    component_mass: np.ndarray
    telescope_residual: float
    final_components: np.ndarray
    clamp_counts: np.ndarray
    sum_snapshots: tuple[FieldState, ...] = dataclasses.field(default=(), repr=False)


def simulate_split_system(cfg: SolverConfig, n: int, initial_parts, seeds,
                          snapshot_every: int = 0,
                          decoupled: bool = False) -> SplitSystemTrajectory:
    """Co-evolve n components whose parts sum to cfg.u0, one noise each.

    All components advance simultaneously using the partial sums of the
    current time level.  decoupled=True is the negative-control mode: it
    zeroes the coupling sums, so each component runs with plain coefficient
    (uⁱ)^γ and the summed field carries visibly too little noise.
    """
    if not cfg.nonlinearity.is_power:
        raise ValueError("splitting is defined for the power nonlinearity only")
    if n < 1:
        raise ValueError(f"need at least one component, got {n}")
    if len(initial_parts) != n or len(seeds) != n:
        raise ValueError("initial_parts and seeds must both have length n")
    gamma = cfg.nonlinearity.gamma
    lat = cfg.lattice
    comps = np.stack([np.asarray(q, dtype=float) for q in initial_parts])
    if comps.shape != (n, lat.nx):
        raise ValueError(f"parts must each have {lat.nx} cells")
    if np.any(comps < 0):
        raise ValueError("initial parts must be nonnegative")
    defect = float(np.max(np.abs(comps.sum(axis=0) - cfg.u0)))
    if defect > 1e-12 * max(1.0, float(np.max(np.abs(cfg.u0)))):
        raise ValueError(f"parts do not sum to u0 (max defect {defect:.3e})")

    streams = [increment_stream(lat, int(s), 0, block_rows=4096) for s in seeds]
    tg = 2.0 * gamma
    mass = np.empty((n, lat.nt + 1))
    mass[:, 0] = lat.dx * comps.sum(axis=1)
    clamp_counts = np.zeros(n, dtype=np.int64)
    telescope_residual = 0.0
    status = COMPLETED
    status_time = None
    snapshots: list[FieldState] = []
    if snapshot_every > 0:
        snapshots.append(FieldState(time=0.0, values=comps.sum(axis=0), dx=lat.dx))

    m = 0
    done = False
    for blocks in zip(*streams):
        for r in range(blocks[0].shape[0]):
            rows = np.stack([b[r] for b in blocks])
            coeff = np.empty_like(comps)
            s_prev = np.zeros(lat.nx)
            for i in range(n):
                coeff[i] = split_coefficient(comps[i],
                                             np.zeros(lat.nx) if decoupled else s_prev,
                                             gamma)
                s_prev = s_prev + comps[i]
            if not decoupled:
                total_sq = s_prev ** tg
                defect = np.max(np.abs((coeff ** 2).sum(axis=0) - total_sq)
                                / np.maximum(1.0, total_sq))
                telescope_residual = max(telescope_residual, float(defect))
            comps, clamped = step_values(comps, rows, lat.dt, lat.dx,
                                         lambda u, c=coeff: c)
            clamp_counts += np.count_nonzero(clamped, axis=1)
            m += 1
            t = m * lat.dt
            mass[:, m] = lat.dx * comps.sum(axis=1)
            total = comps.sum(axis=0)
            if not np.all(np.isfinite(comps)):
                status, status_time, done = NUMERICAL_FAILURE, t, True
            elif float(total.max()) >= cfg.cutoff:
                status, status_time, done = CUTOFF_HIT, t, True
            if snapshot_every > 0 and (m % snapshot_every == 0 or done):
                snapshots.append(FieldState(time=t, values=total, dx=lat.dx))
            if done:
                break
        if done:
            break
    return SplitSystemTrajectory(
        n=n, status=status, status_time=status_time, n_steps=m,
        times=lat.dt * np.arange(m + 1), component_mass=mass[:, :m + 1],
        telescope_residual=telescope_residual, final_components=comps,
        clamp_counts=clamp_counts, sum_snapshots=tuple(snapshots),
    )


def split_sum_check(cfg: SolverConfig, n: int, n_paths: int, *, seed: int = 0,
                    alpha: float = 0.01, negative_control: bool = False) -> dict:
    """Distributional equality of the summed split system with the direct
    solver: two-sample KS on lattice mass and sup at the half-time snapshot
    and the final time, Bonferroni alpha over the four statistics.
    """
    if n_paths < 1000:
        raise InsufficientDataError(f"need at least 1000 paths per ensemble, got {n_paths}")
    lat = cfg.lattice
    half = max(1, lat.nt // 2)
    parts = [cfg.u0 / n] * n

    def stats_of(mid: FieldState, fin: FieldState) -> list[float]:
        return [mid.dx * mid.values.sum(), fin.dx * fin.values.sum(),
                float(mid.values.max()), float(fin.values.max())]

    rows_a = np.empty((n_paths, 4))
    for k in range(n_paths):
        traj = run_trajectory(cfg, seed, stream=k, snapshot_every=half)
        rows_a[k] = stats_of(traj.snapshots[1], traj.final)
    rows_b = np.empty((n_paths, 4))
    base = seed + 7_777_777
    for k in range(n_paths):
        comp_seeds = [base + k * n + i for i in range(n)]
        sys_traj = simulate_split_system(cfg, n, parts, comp_seeds,
                                         snapshot_every=half,
                                         decoupled=negative_control)
        fin = FieldState(time=sys_traj.times[-1],
                         values=sys_traj.final_components.sum(axis=0), dx=lat.dx)
        rows_b[k] = stats_of(sys_traj.sum_snapshots[1], fin)

    names = ("mass_mid", "mass_final", "sup_mid", "sup_final")
    bonf = alpha / len(names)
    statistics = []
    all_pass = True
    for i, name in enumerate(names):
        ks = sps.ks_2samp(rows_a[:, i], rows_b[:, i])
        ok = bool(ks.pvalue >= bonf)
        all_pass &= ok
        statistics.append({"name": name, "test": "ks_2samp",
                           "mean_a": float(rows_a[:, i].mean()),
                           "mean_b": float(rows_b[:, i].mean()),
                           "statistic": float(ks.statistic),
                           "p_value": float(ks.pvalue), "pass": ok})
    return {"n_paths": n_paths, "n_components": n, "alpha": alpha,
            "bonferroni_alpha": bonf, "negative_control": negative_control,
            "statistics": statistics, "all_pass": all_pass}


# -- mass decomposition ------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class DecompositionResult:
    parts: tuple[np.ndarray, ...]
    centers: tuple[float, ...]
    scores: tuple[float, ...]
    threshold: float


def _slab_score(values: np.ndarray, x: np.ndarray, dx: float, lo: int, hi: int,
                T: float, J: float) -> tuple[float, float]:
    seg = values[lo:hi]
    plain = float(seg.sum())
    if plain <= 0.0:
        return 0.0, min(max(0.5 * (x[lo] + x[hi - 1]), 1.0), J - 1.0)
    z = float(np.dot(x[lo:hi], seg) / plain)
    z = min(max(z, 1.0), J - 1.0)
    w = np.asarray(phi(0.0, x[lo:hi], TestFunctionParams(T=T, center=z)))
    return dx * float(np.dot(w, seg)), z


def mass_decompose(f0: FieldState, p: TestFunctionParams, n: int,
                   threshold: float = 2.0) -> DecompositionResult:
    """Partition f0 into n contiguous whole-cell slabs, each carrying
    weighted mass >= threshold against the test function centered at the
    slab's own clipped centroid.

    Slabs cover disjoint cell ranges, so the parts sum back to f0 bitwise.
    Construction is greedy left to right (close a slab as soon as it meets
    the threshold, last slab absorbs the tail); when no n-slab partition of
    that family meets the threshold everywhere the error reports the largest
    count that does.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 parts, got {n}")
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    values = f0.values
    if np.any(values < 0):
        raise ValueError("profile must be nonnegative")
    nx = values.size
    dx = f0.dx
    J = dx * (nx + 1)
    if J <= 2.0:
        raise ValueError(f"domain length {J} leaves no room for centers in [1, J-1]")
    x = dx * np.arange(1, nx + 1)

    # greedy minimal prefix slabs
    cuts: list[int] = []
    lo = 0
    for hi in range(1, nx + 1):
        score, _ = _slab_score(values, x, dx, lo, hi, p.T, J)
        if score >= threshold:
            cuts.append(hi)
            lo = hi
    c = len(cuts)

    def tail_ok(k: int) -> tuple[bool, float, float]:
        # slab k (1-based) spans from cut k-1 to the end of the domain
        start = cuts[k - 1 - 1] if k >= 2 else 0
        score, z = _slab_score(values, x, dx, start, nx, p.T, J)
        return score >= threshold, score, z

    feasible = [k for k in range(1, c + 1) if tail_ok(k)[0]]
    achievable = max(feasible, default=0)
    if n not in feasible:
        raise DecompositionInfeasible(
            f"cannot split into {n} parts of weighted mass >= {threshold}; "
            f"achievable count is {achievable}", achievable)

    bounds = [0] + cuts[:n - 1] + [nx]
    parts = []
    centers = []
    scores = []
    for i in range(n):
        lo, hi = bounds[i], bounds[i + 1]
        score, z = _slab_score(values, x, dx, lo, hi, p.T, J)
        part = np.zeros_like(values)
        part[lo:hi] = values[lo:hi]
        parts.append(part)
        centers.append(z)
        scores.append(score)
    return DecompositionResult(parts=tuple(parts), centers=tuple(centers),
                               scores=tuple(scores), threshold=threshold)


def kernel_mass(state: FieldState, s: float, x_eval, dom):
    """Heat-kernel smoothed field dx Σ_y G_D(s, x, y) u(y) at position x.

    The alternative success functional: mass read through the Dirichlet
    kernel at look-ahead s instead of the backward test function.  Kept
    separate from the weighted-mass game on purpose; the two readings are
    not interchangeable.
    """
    x_eval = np.asarray(x_eval, dtype=float)
    scalar = x_eval.ndim == 0
    x_nodes = grid_x(dom, state.values.size)
    rows = dirichlet_kernel(s, np.atleast_1d(x_eval)[:, None], x_nodes[None, :], dom)
    out = state.dx * (rows @ state.values)
    return float(out[0]) if scalar else out


# -- Galton-Watson surrogate -------------------------------------------------

@dataclasses.dataclass(frozen=True)
class GWModel:
    """Offspring law Binomial(n_offspring, p); gamma/l_level/k_const record
    where the parameters came from when built through gw_model."""

    p: float
    n_offspring: int
    gamma: float | None = None
    l_level: float | None = None
    k_const: float | None = None
    offspring_law: str = "binomial"

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"success probability must lie in [0, 1], got {self.p}")
        if self.n_offspring < 1:
            raise ValueError(f"need at least one offspring slot, got {self.n_offspring}")
        if self.offspring_law != "binomial":
            raise ValueError(f"unsupported offspring law {self.offspring_law!r}")

    @property
    def mean(self) -> float:
        return self.p * self.n_offspring


def gw_model(gamma: float, l_level: float, k_const: float = 1.0) -> GWModel:
    """p = 1/(2(L-1)) ruin bound, N = max(1, floor(K^-1 L^{2(γ-1)}))."""
    if l_level <= 1:
        raise ValueError(f"level must exceed 1, got {l_level}")
    if k_const <= 0:
        raise ValueError(f"K must be positive, got {k_const}")
    raw = l_level ** (2.0 * (gamma - 1.0)) / k_const
    return GWModel(p=1.0 / (2.0 * (l_level - 1.0)),
                   n_offspring=max(1, math.floor(raw + 1e-9)),
                   gamma=gamma, l_level=l_level, k_const=k_const)


@dataclasses.dataclass(frozen=True)
class GWMeanResult:
    heuristic: float
    bound: float
    heuristic_supercritical: bool
    bound_supercritical: bool


def gw_mean(gamma: float, l_level: float, k_const: float = 1.0) -> GWMeanResult:
    """Heuristic offspring mean L^{2γ-3} and the proof's lower-bound form
    K⁻¹ 4^{1-2γ} L^{2(γ-3/2)}, each flagged against criticality."""
    if l_level <= 1 or k_const <= 0 or gamma <= 1:
        raise ValueError("need L > 1, K > 0, gamma > 1")
    heuristic = l_level ** (2.0 * gamma - 3.0)
    bound = 4.0 ** (1.0 - 2.0 * gamma) * l_level ** (2.0 * (gamma - 1.5)) / k_const
    return GWMeanResult(heuristic=heuristic, bound=bound,
                        heuristic_supercritical=heuristic > 1.0,
                        bound_supercritical=bound > 1.0)


def gw_extinction(model: GWModel, tol: float = 1e-12, max_iter: int = 10 ** 6) -> float:
    """Smallest fixed point of q = (1 - p + pq)^N by monotone iteration.

    Subcritical and critical non-degenerate laws return 1 exactly; the
    deterministic line of descent (p = 1, N = 1) returns 0.  Supercritical
    iteration converges geometrically; precision degrades only for means
    within ~tol of 1, which the callers here avoid.
    """
    p, N = model.p, model.n_offspring
    if p == 1.0 and N == 1:
        return 0.0
    if model.mean <= 1.0:
        return 1.0
    q = 0.0
    for _ in range(max_iter):
        q_next = (1.0 - p + p * q) ** N
        if abs(q_next - q) <= tol:
            return q_next
        q = q_next
    return q


@dataclasses.dataclass(frozen=True)
class GWSimulationResult:
    survival_frequency: float
    ci_low: float
    ci_high: float
    n_trees: int
    n_capped: int


def gw_simulate(model: GWModel, generations: int, n_trees: int,
                seed: int) -> GWSimulationResult:
    """Fraction of trees alive at the final generation, Wilson CI.

    Trees whose attempt count would exceed the population cap are frozen
    and counted as surviving (supercritical escape), with the count
    reported so the truncation is visible.
    """
    if generations < 1:
        raise ValueError(f"need at least one generation, got {generations}")
    if n_trees < 1:
        raise ValueError(f"need at least one tree, got {n_trees}")
    rng = _generator(seed, 0)
    z = np.ones(n_trees, dtype=np.int64)
    capped = np.zeros(n_trees, dtype=bool)
    for _ in range(generations):
        active = (z > 0) & ~capped
        if not active.any():
            break
        attempts = z[active] * model.n_offspring
        over = attempts > _POP_CAP
        if over.any():
            idx = np.flatnonzero(active)
            capped[idx[over]] = True
            active[idx[over]] = False
            attempts = attempts[~over]
        if attempts.size:
            z[active] = rng.binomial(attempts, model.p)
    alive = (z > 0) | capped
    n_alive = int(np.count_nonzero(alive))
    lo, hi = wilson_ci(n_alive, n_trees)
    return GWSimulationResult(survival_frequency=n_alive / n_trees,
                              ci_low=lo, ci_high=hi, n_trees=n_trees,
                              n_capped=int(np.count_nonzero(capped)))
