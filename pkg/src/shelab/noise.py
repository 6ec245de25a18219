"""Discrete space-time white noise: generation, scaling, combination, replay.

Counter-based contract: cell (n, j) of trajectory ``stream`` under master seed
``seed`` is a pure function of (seed, stream, n, j), realized with a Philox
generator keyed by (seed, stream). Row-by-row, chunked, and whole-grid draws
of the same stream produce bit-identical values, so the solver's streaming
loop, the mild-solution replay, and ensemble pregeneration all see the same
noise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from shelab.errors import CapacityError, LatticeAlignmentError

_HEADER = struct.Struct("<qqddq")  # nt, nx, dt, dx, seed
_MAX_CELLS = 1 << 31


@dataclass(frozen=True)
class LatticeSpec:
    """Time-space lattice: nt steps of dt, nx interior cells of width dx."""

    nt: int
    nx: int
    dt: float
    dx: float

    def __post_init__(self):
        if self.nt < 1 or self.nx < 1:
            raise ValueError(f"lattice needs nt, nx >= 1, got nt={self.nt}, nx={self.nx}")
        if not (self.dt > 0 and self.dx > 0):
            raise ValueError(f"lattice needs dt, dx > 0, got dt={self.dt}, dx={self.dx}")

    @property
    def cell_variance(self) -> float:
        return self.dt * self.dx


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    """White-noise increments on a lattice; cell (n, j) ~ N(0, dt*dx), independent.

    ``origin`` tracks (base_spec, base_seed, base_increments, lbar, gamma) for
    grids produced by scale_noise, so composed scalings multiply lbar exactly
    once into the base draw (bit-identical composition). ``normalized`` is set
    False by combine_noises when the squared weights do not sum to one.
    """

    spec: LatticeSpec
    seed: int
    increments: np.ndarray
    origin: tuple | None = field(default=None, repr=False)
    normalized: bool = True

    def __post_init__(self):
        if self.increments.shape != (self.spec.nt, self.spec.nx):
            raise ValueError(
                f"increments shape {self.increments.shape} does not match "
                f"lattice ({self.spec.nt}, {self.spec.nx})"
            )


def _generator(seed: int, stream: int) -> np.random.Generator:
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be a 64-bit nonnegative integer, got {seed}")
    if not 0 <= stream < 2 ** 64:
        raise ValueError(f"stream index must be a 64-bit nonnegative integer, got {stream}")
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def sample_noise(spec: LatticeSpec, seed: int, stream: int = 0) -> NoiseGrid:
    """Materialize the full (nt, nx) increment grid for one stream."""
    if spec.nt * spec.nx > _MAX_CELLS:
        raise CapacityError(
            f"lattice has {spec.nt * spec.nx} cells, above the {_MAX_CELLS} cap"
        )
    rng = _generator(seed, stream)
    inc = rng.normal(0.0, np.sqrt(spec.cell_variance), size=(spec.nt, spec.nx))
    return NoiseGrid(spec=spec, seed=seed, increments=inc)


def increment_stream(
    spec: LatticeSpec, seed: int, stream: int = 0, block_rows: int = 1024
) -> Iterator[np.ndarray]:
    """Yield the same increments as sample_noise in (block, nx) chunks.

    Draw order matches the whole-grid fill bit for bit, which is what lets the
    solver stream noise without materializing nt * nx values.
    """
    if block_rows < 1:
        raise ValueError("block_rows must be >= 1")
    rng = _generator(seed, stream)
    sd = np.sqrt(spec.cell_variance)
    done = 0
    while done < spec.nt:
        rows = min(block_rows, spec.nt - done)
        yield rng.normal(0.0, sd, size=(rows, spec.nx))
        done += rows


def scale_noise(w: NoiseGrid, lbar: float, gamma: float) -> NoiseGrid:
    """Renormalized noise: increments scaled by lbar^(3(gamma-1)) on the 1:1
    mapped lattice (dt^~ = dt * lbar^(4(gamma-1)), dx^~ = dx * lbar^(2(gamma-1))).

    Each scaled cell is the aggregation of exactly one source cell, so each
    output cell has variance dt^~ * dx^~. Composing scalings with lbar1 then
    lbar2 (same gamma) collapses onto the base grid with lbar1*lbar2 and is
    bit-identical to the single scaling.
    """
    if not lbar > 0:
        raise ValueError(f"scale factor must be positive, got {lbar}")
    if lbar == 1.0:
        return w
    if w.origin is not None and w.origin[4] == gamma:
        base_spec, base_seed, base_inc, lbar0, _ = w.origin
        lbar_total = lbar0 * lbar
    else:
        base_spec, base_seed, base_inc = w.spec, w.seed, w.increments
        lbar_total = lbar
    t_fac = lbar_total ** (4.0 * (gamma - 1.0))
    x_fac = lbar_total ** (2.0 * (gamma - 1.0))
    w_fac = lbar_total ** (3.0 * (gamma - 1.0))
    spec = LatticeSpec(
        nt=base_spec.nt, nx=base_spec.nx, dt=base_spec.dt * t_fac, dx=base_spec.dx * x_fac
    )
    return NoiseGrid(
        spec=spec,
        seed=base_seed,
        increments=base_inc * w_fac,
        origin=(base_spec, base_seed, base_inc, lbar_total, gamma),
        normalized=w.normalized,
    )


def combine_noises(parts: Sequence[tuple[float | np.ndarray, NoiseGrid]]) -> NoiseGrid:
    """Cellwise weighted sum of noise grids sharing one lattice.

    Weights may be scalars or (nt, nx) arrays. When the cellwise sum of squared
    weights is 1 the result is again white with cell variance dt*dx; otherwise
    the returned grid carries normalized=False.
    """
    if not parts:
        raise ValueError("combine_noises needs at least one (weight, grid) part")
    spec = parts[0][1].spec
    for _, g in parts[1:]:
        if g.spec != spec:
            raise LatticeAlignmentError(
                f"cannot combine noise on lattice {g.spec} with lattice {spec}"
            )
    total = np.zeros((spec.nt, spec.nx))
    sumsq = np.zeros((spec.nt, spec.nx))
    for wgt, g in parts:
        wgt = np.asarray(wgt, dtype=float)
        if wgt.ndim not in (0, 2):
            raise ValueError("weights must be scalars or (nt, nx) arrays")
        if wgt.ndim == 2 and wgt.shape != (spec.nt, spec.nx):
            raise LatticeAlignmentError(
                f"weight array shape {wgt.shape} does not match lattice "
                f"({spec.nt}, {spec.nx})"
            )
        total += wgt * g.increments
        sumsq += wgt * wgt
    normalized = bool(np.all(np.abs(sumsq - 1.0) < 1e-9))
    return NoiseGrid(spec=spec, seed=parts[0][1].seed, increments=total, normalized=normalized)


def zero_noise(spec: LatticeSpec, seed: int = 0) -> NoiseGrid:
    """Variance-zero grid, used to drive the solver as pure heat flow in tests."""
    return NoiseGrid(spec=spec, seed=seed, increments=np.zeros((spec.nt, spec.nx)))


def dump_noise(grid: NoiseGrid, path: str | Path) -> None:
    """Binary replay dump: little-endian 64-bit header (nt, nx, dt, dx, seed),
    then the increments as row-major float64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(grid.spec.nt, grid.spec.nx, grid.spec.dt, grid.spec.dx, grid.seed)
        )
        f.write(np.ascontiguousarray(grid.increments, dtype="<f8").tobytes())


def load_noise(path: str | Path) -> NoiseGrid:
    with open(path, "rb") as f:
        nt, nx, dt, dx, seed = _HEADER.unpack(f.read(_HEADER.size))
        payload = f.read()
    inc = np.frombuffer(payload, dtype="<f8").reshape(nt, nx).astype(float)
    return NoiseGrid(spec=LatticeSpec(nt=nt, nx=nx, dt=dt, dx=dx), seed=seed, increments=inc)
