"""Explicit Euler-Maruyama integrator for u_t = u_xx + g(u) dW on [0, J].

Scheme on interior nodes x_j = j dx, dx = J/(nx+1), Dirichlet zeros at both
endpoints:

    u'_j = u_j + dt (u_{j+1} - 2 u_j + u_{j-1}) / dx^2 + g(u_j) dW_j / dx

with dW_j ~ N(0, dt dx), then clamp to >= 0 (the discrete scheme can
undershoot; clamp events are counted and reported). Stability needs
dt <= dx^2/2.

Everything that advances a field goes through step_values, so the direct
solver, the batched ensemble runner, and the split-system driver stay
bit-compatible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from shelab.errors import LatticeAlignmentError
from shelab.kernels import Domain, dirichlet_kernel
from shelab.noise import LatticeSpec, NoiseGrid, increment_stream

_CFL_SLACK = 1.0 + 1e-12

COMPLETED = "completed"
CUTOFF_HIT = "cutoff_hit"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class Nonlinearity:
    """Noise coefficient g(u) >= 0 with g(0) = 0; power law u^gamma unless a
    general map is supplied. gamma stays meaningful for the general form too:
    it names the power-law floor g(u) >= u^gamma the map is meant to dominate.
    """

    gamma: float
    g: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, u):
        if self.g is None:
            return u ** self.gamma
        return self.g(u)

    @property
    def is_power(self) -> bool:
        return self.g is None


@dataclass(frozen=True)
class FieldState:
    """Solution values at interior nodes at one time; boundary nodes are 0.

    Carries dx so quadrature against test functions needs no extra context.
    """

    time: float
    values: np.ndarray
    dx: float

    @property
    def x(self) -> np.ndarray:
        return self.dx * np.arange(1, len(self.values) + 1)

    @property
    def sup(self) -> float:
        return float(np.max(self.values))


@dataclass(frozen=True)
class SolverConfig:
    dom: Domain
    lattice: LatticeSpec
    nonlinearity: Nonlinearity
    u0: np.ndarray
    cutoff: float = 1e6
    levels: tuple[float, ...] = ()

    def __post_init__(self):
        lat = self.lattice
        if lat.dt > (lat.dx * lat.dx / 2.0) * _CFL_SLACK:
            raise ValueError(
                f"unstable lattice: dt={lat.dt} exceeds the stability bound "
                f"dt <= dx^2/2 = {lat.dx * lat.dx / 2.0}"
            )
        if abs(lat.dx * (lat.nx + 1) - self.dom.J) > 1e-9 * self.dom.J:
            raise ValueError(
                f"lattice does not tile the domain: dx*(nx+1)="
                f"{lat.dx * (lat.nx + 1)} vs J={self.dom.J}"
            )
        u0 = np.asarray(self.u0, dtype=float)
        if u0.shape != (lat.nx,):
            raise ValueError(f"u0 must have shape ({lat.nx},), got {u0.shape}")
        if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
            raise ValueError("u0 must be finite and nonnegative")
        if not np.max(u0) > 0:
            raise ValueError("u0 must not be identically zero")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        lv = tuple(float(l) for l in self.levels)
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must be strictly increasing")
        if lv and lv[-1] > self.cutoff:
            raise ValueError("levels must not exceed the cutoff")
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "levels", lv)

    @property
    def horizon(self) -> float:
        return self.lattice.nt * self.lattice.dt

    def config_hash(self) -> str:
        h = hashlib.sha256()
        lat = self.lattice
        h.update(
            repr(
                (
                    self.dom.J, lat.nt, lat.nx, lat.dt, lat.dx,
                    self.nonlinearity.gamma, self.nonlinearity.is_power,
                    self.cutoff, self.levels,
                )
            ).encode()
        )
        h.update(self.u0.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class TrajectoryRecord:
    """One simulated path: level-hit times, termination status, snapshots."""

    config_hash: str
    seed: int
    stream: int
    status: str  # completed | cutoff_hit | numerical_failure
    status_time: float | None
    hit_times: tuple[float | None, ...]
    clamp_count: int
    n_steps: int
    final: FieldState
    snapshots: tuple[FieldState, ...] = field(default=(), repr=False)


def grid_x(dom: Domain, nx: int) -> np.ndarray:
    """Interior node positions j*dx, j = 1..nx."""
    dx = dom.J / (nx + 1)
    return dx * np.arange(1, nx + 1)


def make_lattice(dom: Domain, nx: int, horizon: float, dt_factor: float = 0.25) -> LatticeSpec:
    """Lattice with dx = J/(nx+1), dt = dt_factor*dx^2, nt covering the horizon.

    The default dt_factor 1/4 sits at half the stability bound, leaving margin
    for the noise term.
    """
    if not dt_factor > 0:
        raise ValueError("dt_factor must be positive")
    dx = dom.J / (nx + 1)
    dt = dt_factor * dx * dx
    nt = max(1, int(np.ceil(horizon / dt - 1e-9)))
    return LatticeSpec(nt=nt, nx=nx, dt=dt, dx=dx)


def bump_profile(dom: Domain, nx: int, height: float = 2.0, center: float | None = None,
                 width: float | None = None) -> np.ndarray:
    """Gaussian bump sampled on interior nodes (boundary tails negligible)."""
    c = dom.J / 2.0 if center is None else center
    w = dom.J / 10.0 if width is None else width
    x = grid_x(dom, nx)
    return height * np.exp(-((x - c) ** 2) / (2.0 * w * w))


def sine_profile(dom: Domain, nx: int, height: float = 1.0) -> np.ndarray:
    return height * np.sin(np.pi * grid_x(dom, nx) / dom.J)


def step_values(u: np.ndarray, d_w: np.ndarray, dt: float, dx: float,
                nl: Nonlinearity) -> tuple[np.ndarray, np.ndarray]:
    """One scheme step on (..., nx) arrays.

    Returns (clamped field, boolean clamp mask). Elementwise arithmetic only,
    so batched and single-path calls produce bit-identical values.
    """
    r = dt / (dx * dx)
    lap = -2.0 * u
    lap[..., :-1] += u[..., 1:]
    lap[..., 1:] += u[..., :-1]
    new = u + r * lap + nl(u) * (d_w / dx)
    clamped = new < 0.0
    np.maximum(new, 0.0, out=new)
    return new, clamped


def step(state: FieldState, cfg: SolverConfig, noise_row: np.ndarray) -> FieldState:
    """Single step of one field against one row of N(0, dt dx) increments."""
    lat = cfg.lattice
    noise_row = np.asarray(noise_row, dtype=float)
    if noise_row.shape != (lat.nx,):
        raise ValueError(f"noise row must have shape ({lat.nx},), got {noise_row.shape}")
    new, _ = step_values(state.values, noise_row, lat.dt, lat.dx, cfg.nonlinearity)
    return FieldState(time=state.time + lat.dt, values=new, dx=state.dx)


def run_trajectory(cfg: SolverConfig, seed: int, stream: int = 0,
                   snapshot_every: int = 0, noise: NoiseGrid | None = None) -> TrajectoryRecord:
    """Integrate one path to the horizon or until cutoff/failure.

    Deterministic given (cfg, seed, stream); passing an explicit NoiseGrid
    overrides the generated stream (replay, zero-noise runs, splitting tests).
    snapshot_every=k stores every k-th state (k=1 is what quadratic-variation
    runs need); 0 stores none beyond the final state.
    """
    lat = cfg.lattice
    if noise is not None:
        if noise.spec != lat:
            raise LatticeAlignmentError(
                f"noise lattice {noise.spec} does not match solver lattice {lat}"
            )
        blocks = iter([noise.increments])
    else:
        blocks = increment_stream(lat, seed, stream, block_rows=4096)
    u = cfg.u0.copy()
    hits: list[float | None] = [None] * len(cfg.levels)
    next_idx = 0
    sup = float(np.max(u))
    while next_idx < len(cfg.levels) and sup >= cfg.levels[next_idx]:
        hits[next_idx] = 0.0
        next_idx += 1
    status = COMPLETED
    status_time = None
    clamp_count = 0
    snapshots: list[FieldState] = []
    if snapshot_every > 0:
        snapshots.append(FieldState(time=0.0, values=u.copy(), dx=lat.dx))
    n = 0
    done = False
    for block in blocks:
        for row in block:
            u, clamped = step_values(u, row, lat.dt, lat.dx, cfg.nonlinearity)
            clamp_count += int(np.count_nonzero(clamped))
            n += 1
            t = n * lat.dt
            if not np.all(np.isfinite(u)):
                status, status_time, done = NUMERICAL_FAILURE, t, True
                break
            sup = float(np.max(u))
            while next_idx < len(cfg.levels) and sup >= cfg.levels[next_idx]:
                hits[next_idx] = t
                next_idx += 1
            if snapshot_every > 0 and n % snapshot_every == 0:
                snapshots.append(FieldState(time=t, values=u.copy(), dx=lat.dx))
            if sup >= cfg.cutoff:
                status, status_time, done = CUTOFF_HIT, t, True
                break
            if n >= lat.nt:
                done = True
                break
        if done:
            break
    final = FieldState(time=n * lat.dt, values=u, dx=lat.dx)
    return TrajectoryRecord(
        config_hash=cfg.config_hash(), seed=seed, stream=stream, status=status,
        status_time=status_time, hit_times=tuple(hits), clamp_count=clamp_count,
        n_steps=n, final=final, snapshots=tuple(snapshots),
    )


def run_ensemble(cfg: SolverConfig, seed: int, n_paths: int, threads: int = 1,
                 target_block_bytes: int = 64 << 20) -> list[TrajectoryRecord]:
    """n_paths trajectories on streams 0..n_paths-1, batched across paths.

    Matches [run_trajectory(cfg, seed, stream=k) for k in range(n_paths)]
    record for record; results are merged in stream order regardless of
    worker completion order.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if threads <= 1 or n_paths < 4:
        return _ensemble_block(cfg, seed, 0, n_paths, target_block_bytes)
    from concurrent.futures import ProcessPoolExecutor

    bounds = np.linspace(0, n_paths, threads + 1).astype(int)
    spans = [(int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=len(spans)) as pool:
        futs = [
            pool.submit(_ensemble_block, cfg, seed, a, b, target_block_bytes)
            for a, b in spans
        ]
        chunks = [f.result() for f in futs]
    return [rec for chunk in chunks for rec in chunk]


def _ensemble_block(cfg: SolverConfig, seed: int, k0: int, k1: int,
                    target_block_bytes: int) -> list[TrajectoryRecord]:
    """Evolve streams [k0, k1) as one (n_paths, nx) batch with early freezing."""
    lat = cfg.lattice
    nl = cfg.nonlinearity
    n_paths = k1 - k0
    n_levels = len(cfg.levels)
    levels = np.asarray(cfg.levels)
    u = np.tile(cfg.u0, (n_paths, 1))
    active = np.ones(n_paths, dtype=bool)
    status = [COMPLETED] * n_paths
    status_time: list[float | None] = [None] * n_paths
    stop_step = np.full(n_paths, lat.nt, dtype=np.int64)
    clamp_count = np.zeros(n_paths, dtype=np.int64)
    hit = np.full((n_paths, n_levels), np.nan)
    next_idx = np.zeros(n_paths, dtype=np.int64)

    sup0 = float(np.max(cfg.u0))
    k_init = 0
    while k_init < n_levels and sup0 >= levels[k_init]:
        hit[:, k_init] = 0.0
        k_init += 1
    next_idx[:] = k_init

    block_rows = max(1, min(lat.nt, target_block_bytes // (8 * max(1, n_paths * lat.nx))))
    streams = [increment_stream(lat, seed, k0 + k, block_rows=block_rows)
               for k in range(n_paths)]
    block = np.empty((n_paths, block_rows, lat.nx))
    n = 0
    while n < lat.nt and bool(np.any(active)):
        rows = min(block_rows, lat.nt - n)
        for k, s in enumerate(streams):
            block[k, :rows] = next(s)
        for m in range(rows):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            new, clamped = step_values(u[idx], block[idx, m, :], lat.dt, lat.dx, nl)
            clamp_count[idx] += np.count_nonzero(clamped, axis=-1)
            u[idx] = new
            t = (n + m + 1) * lat.dt
            finite = np.all(np.isfinite(new), axis=-1)
            bad = idx[~finite]
            for b in bad:
                status[b] = NUMERICAL_FAILURE
                status_time[b] = t
            stop_step[bad] = n + m + 1
            active[bad] = False
            ok = idx[finite]
            if ok.size == 0:
                continue
            sup = np.max(u[ok], axis=-1)
            if n_levels:
                cand, cand_sup = ok, sup
                while cand.size:
                    open_ = next_idx[cand] < n_levels
                    cand, cand_sup = cand[open_], cand_sup[open_]
                    if not cand.size:
                        break
                    crossed = cand_sup >= levels[next_idx[cand]]
                    cand, cand_sup = cand[crossed], cand_sup[crossed]
                    if not cand.size:
                        break
                    hit[cand, next_idx[cand]] = t
                    next_idx[cand] += 1
            cut = ok[sup >= cfg.cutoff]
            for c in cut:
                status[c] = CUTOFF_HIT
                status_time[c] = t
            stop_step[cut] = n + m + 1
            active[cut] = False
        n += rows

    chash = cfg.config_hash()
    records = []
    for k in range(n_paths):
        hits = tuple(None if np.isnan(h) else float(h) for h in hit[k])
        final = FieldState(time=float(stop_step[k] * lat.dt), values=u[k].copy(), dx=lat.dx)
        records.append(
            TrajectoryRecord(
                config_hash=chash, seed=seed, stream=k0 + k, status=status[k],
                status_time=status_time[k], hit_times=hits,
                clamp_count=int(clamp_count[k]), n_steps=int(stop_step[k]), final=final,
            )
        )
    return records


@dataclass(frozen=True)
class MildCheckResult:
    residual: float
    clamp_count: int
    n_steps: int


def mild_solution_step_check(cfg: SolverConfig, noise: NoiseGrid, t_check: float) -> MildCheckResult:
    """Rebuild u(t_check) from the kernel-convolution form and compare.

    Discrete Duhamel sum using the same noise and the finite-difference path's
    g(u) values:

        u_mild(t_N) = dx * K(t_N) u0
                    + sum_{m<=N-2} K((N-1-m) dt) [g(u^m) dW^m]
                    + g(u^{N-1}) dW^{N-1} / dx

    where K(tau) is the Dirichlet kernel matrix at elapsed time tau. The final
    increment enters unsmoothed because the scheme adds it without another
    diffusion step. Returns the sup-norm discrepancy against the
    finite-difference field; O(dt + dx^2) deterministic part, O(sqrt(dx))
    stochastic part. Clamp events along the checked path are counted (the
    mild form cannot reproduce clamping, so regimes with clamps inflate the
    residual; pick amplitudes where none occur).
    """
    lat = cfg.lattice
    if noise.spec != lat:
        raise LatticeAlignmentError(
            f"noise lattice {noise.spec} does not match solver lattice {lat}"
        )
    n_steps = int(round(t_check / lat.dt))
    if abs(n_steps * lat.dt - t_check) > 1e-9 * max(lat.dt, t_check):
        raise LatticeAlignmentError(
            f"t_check={t_check} is not a lattice time (dt={lat.dt})"
        )
    if n_steps > lat.nt:
        raise ValueError(f"t_check={t_check} beyond the noise horizon {lat.nt * lat.dt}")
    if n_steps == 0:
        return MildCheckResult(residual=0.0, clamp_count=0, n_steps=0)

    nl = cfg.nonlinearity
    u = cfg.u0.copy()
    g_rows = np.empty((n_steps, lat.nx))
    clamp_count = 0
    for m in range(n_steps):
        g_rows[m] = nl(u)
        u, clamped = step_values(u, noise.increments[m], lat.dt, lat.dx, nl)
        clamp_count += int(np.count_nonzero(clamped))
    fd_field = u

    x = grid_x(cfg.dom, lat.nx)
    mild = lat.dx * (dirichlet_kernel(n_steps * lat.dt, x[:, None], x[None, :], cfg.dom) @ cfg.u0)
    for m in range(n_steps - 1):
        tau = (n_steps - 1 - m) * lat.dt
        kernel = dirichlet_kernel(tau, x[:, None], x[None, :], cfg.dom)
        mild += kernel @ (g_rows[m] * noise.increments[m])
    mild += g_rows[n_steps - 1] * noise.increments[n_steps - 1] / lat.dx

    residual = float(np.max(np.abs(mild - fd_field)))
    return MildCheckResult(residual=residual, clamp_count=clamp_count, n_steps=n_steps)
