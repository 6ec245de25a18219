"""Mass functional M(t) = int u(t,x) phi(t,x) dx, its quadratic variation,
and the deterministic Jensen inequality chain

    int u^(2 gamma) phi^2 dx  >=  ||phi^a||_1^(1-2 gamma) (int u phi dx)^(2 gamma)
                              >=  C1 T^(-1/2) M^(2 gamma).

The first step is discrete Hoelder (holds for every nonnegative grid field);
the second replaces the discrete ||phi^a||_1 by its full-line closed form and
the (2T-t) power by its worst case, both of which only enlarge the denominator
side. So the chain is a deterministic inequality at lattice level, not a
statistical one; any violation beyond roundoff is a bug.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from shelab.errors import InsufficientDataError
from shelab.kernels import JensenConstants, TestFunctionParams, phi, phi_l1_norm
from shelab.solver import FieldState, Nonlinearity, TrajectoryRecord


@dataclass(frozen=True)
class MartingalePath:
    """Time series of M along one trajectory plus running QV estimates.

    realized_qv: cumulative sum of squared increments of M.
    theoretical_qv: running left-rule quadrature of int g(u)^2 phi^2 dx ds.
    lower_qv: the same with g(u)^2 replaced by u^(2 gamma).
    """

    times: np.ndarray
    m_values: np.ndarray
    realized_qv: np.ndarray
    theoretical_qv: np.ndarray
    lower_qv: np.ndarray


def mass_functional(state: FieldState, p: TestFunctionParams) -> float:
    """Trapezoid quadrature of phi(t,.) u(t,.) over [0, J].

    Boundary values are the Dirichlet zeros, so the trapezoid rule reduces to
    dx times the interior sum.
    """
    w = phi(state.time, state.x, p)
    return float(state.dx * np.dot(w, state.values))


def _snapshot_grid(traj: TrajectoryRecord) -> tuple[np.ndarray, np.ndarray, float]:
    snaps = traj.snapshots
    if len(snaps) < 2:
        raise InsufficientDataError(
            "trajectory has no per-step snapshots; rerun with snapshot_every=1"
        )
    times = np.array([s.time for s in snaps])
    dts = np.diff(times)
    if np.any(np.abs(dts - dts[0]) > 1e-12 * max(dts[0], 1e-300)):
        raise InsufficientDataError(
            "snapshots are not equally spaced at the lattice step"
        )
    values = np.stack([s.values for s in snaps])
    return times, values, snaps[0].dx


def qv_integral(traj: TrajectoryRecord, p: TestFunctionParams,
                g: Nonlinearity) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Running quadrature of the square-variation integral along a trajectory.

    Returns (times, theoretical_qv, lower_qv): the integral of g(u)^2 phi^2
    and its power-law lower-bound series with u^(2 gamma); for power-law g the
    two coincide exactly.
    """
    times, values, dx = _snapshot_grid(traj)
    dt = float(times[1] - times[0])
    phi_sq = np.stack([np.asarray(phi(t, dx * np.arange(1, values.shape[1] + 1), p)) ** 2
                       for t in times])
    g_rate = dx * np.sum(g(values) ** 2 * phi_sq, axis=1)
    low_rate = dx * np.sum(values ** (2.0 * g.gamma) * phi_sq, axis=1)
    theo = np.concatenate([[0.0], np.cumsum(g_rate[:-1]) * dt])
    low = np.concatenate([[0.0], np.cumsum(low_rate[:-1]) * dt])
    return times, theo, low


def martingale_path(traj: TrajectoryRecord, p: TestFunctionParams,
                    g: Nonlinearity) -> MartingalePath:
    """Assemble M(t), realized QV, and both theoretical QV series for one path."""
    times, values, dx = _snapshot_grid(traj)
    nx = values.shape[1]
    x = dx * np.arange(1, nx + 1)
    phi_vals = np.stack([np.asarray(phi(t, x, p)) for t in times])
    m = dx * np.sum(values * phi_vals, axis=1)
    dm = np.diff(m)
    realized = np.concatenate([[0.0], np.cumsum(dm * dm)])
    _, theo, low = qv_integral(traj, p, g)
    return MartingalePath(times=times, m_values=m, realized_qv=realized,
                          theoretical_qv=theo, lower_qv=low)


def jensen_chain_check(state: FieldState, p: TestFunctionParams,
                       consts: JensenConstants) -> tuple[float, float, float]:
    """(lhs, rhs, margin) of the chain at one state.

    lhs = dx sum u^(2 gamma) phi(t)^2;  rhs = C1 T^(-1/2) M^(2 gamma);
    margin = lhs - rhs, and margin >= -eps_quad for every nonnegative field.
    """
    if np.any(state.values < 0):
        raise ValueError("jensen_chain_check needs a nonnegative field")
    w = np.asarray(phi(state.time, state.x, p))
    lhs = float(state.dx * np.sum(state.values ** (2.0 * consts.gamma) * w * w))
    m = mass_functional(state, p)
    rhs = float(consts.c1 * p.T ** -0.5 * m ** (2.0 * consts.gamma))
    return lhs, rhs, lhs - rhs


def jensen_middle(state: FieldState, p: TestFunctionParams,
                  consts: JensenConstants) -> float:
    """The pre-C(a) middle expression ||phi^a||_1^(1-2 gamma) M^(2 gamma),
    with the full-line closed form for the L1 norm."""
    norm = phi_l1_norm(state.time, p.T, consts.a)
    m = mass_functional(state, p)
    return float(norm ** (1.0 - 2.0 * consts.gamma) * m ** (2.0 * consts.gamma))


def jensen_equality_field(p: TestFunctionParams, x: np.ndarray,
                          consts: JensenConstants, t: float = 0.0,
                          scale: float = 1.0) -> np.ndarray:
    """Field u = scale * phi(t,.)^(a-1): the discrete Hoelder equality case."""
    w = np.asarray(phi(t, x, p))
    return scale * w ** (consts.a - 1.0)


def martingale_diagnostics(ensemble: list[MartingalePath], consts: JensenConstants,
                           p: TestFunctionParams, n_checkpoints: int = 5,
                           qv_tolerance: float = 0.1) -> dict:
    """Ensemble report: supermartingale direction, QV consistency, angle bound.

    (i)  E[M(t)] - M(0) with 3 SE bands at checkpoints; the Dirichlet boundary
         bleeds mass, so only E[M(t)] <= M(0) is testable.
    (ii) ratio of mean realized QV to mean theoretical QV at the final time.
    (iii) fraction of paths where theoretical_qv(t) >= C1 T^(-1/2)
         int_0^t M^(2 gamma) ds at every checkpoint (follows pointwise from
         the Jensen chain; must be 1.0 up to quadrature roundoff).
    """
    if len(ensemble) < 100:
        raise InsufficientDataError(
            f"martingale_diagnostics needs >= 100 paths, got {len(ensemble)}"
        )
    times = ensemble[0].times
    for mp in ensemble:
        if mp.times.shape != times.shape or np.any(np.abs(mp.times - times) > 1e-12):
            raise InsufficientDataError("ensemble paths are not on one time grid")
    n_steps = len(times) - 1
    idx = np.unique(np.linspace(1, n_steps, n_checkpoints).astype(int))
    m = np.stack([mp.m_values for mp in ensemble])
    m0 = float(m[0, 0])
    dt = float(times[1] - times[0])

    checkpoints = []
    for i in idx:
        vals = m[:, i]
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(len(ensemble)))
        drift = mean - m0
        checkpoints.append({
            "time": float(times[i]),
            "mean_m": mean,
            "se": se,
            "drift": drift,
            "supermartingale_ok": bool(drift <= 3.0 * se),
        })

    realized_end = np.array([mp.realized_qv[-1] for mp in ensemble])
    theoretical_end = np.array([mp.theoretical_qv[-1] for mp in ensemble])
    qv_ratio = float(realized_end.mean() / theoretical_end.mean())

    # angle bound, integrated with the same left rule as theoretical_qv
    ok = 0
    for mp in ensemble:
        rhs_rate = consts.c1 * p.T ** -0.5 * mp.m_values ** (2.0 * consts.gamma)
        rhs = np.concatenate([[0.0], np.cumsum(rhs_rate[:-1]) * dt])
        tol = 1e-6 * np.maximum(mp.theoretical_qv, 1e-300)
        if np.all(mp.theoretical_qv[idx] >= rhs[idx] - tol[idx]):
            ok += 1
    angle_fraction = ok / len(ensemble)

    return {
        "n_paths": len(ensemble),
        "m0": m0,
        "checkpoints": checkpoints,
        "supermartingale_ok": bool(all(c["supermartingale_ok"] for c in checkpoints)),
        "qv_ratio": qv_ratio,
        "qv_ratio_ok": bool(abs(qv_ratio - 1.0) <= qv_tolerance),
        "angle_fraction": angle_fraction,
        "angle_ok": bool(angle_fraction == 1.0),
    }


def ensemble_martingale_paths(cfg, seed: int, n_paths: int, p: TestFunctionParams,
                              snapshot_every: int = 1) -> list[MartingalePath]:
    """Run n_paths trajectories (streams 0..n-1) and reduce each to its
    MartingalePath, discarding snapshots as soon as each path is reduced."""
    from shelab.solver import run_trajectory

    out = []
    for k in range(n_paths):
        traj = run_trajectory(cfg, seed, stream=k, snapshot_every=snapshot_every)
        out.append(martingale_path(traj, p, cfg.nonlinearity))
    return out
