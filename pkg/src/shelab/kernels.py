"""Closed-form heat kernels, the backward test function, and inequality constants.

Everything here is a pure function of its arguments. Spatial arguments broadcast
as numpy arrays; time arguments are scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SQRT4PI = np.sqrt(4.0 * np.pi)
# series truncation: stop once the next term falls below this fraction of the sum
_TRUNC = 1e-15
# endpoint roundoff tolerance for t <= T checks (accumulated lattice times)
_T_SLACK = 1e-9


@dataclass(frozen=True)
class Domain:
    """Spatial interval [0, J] with Dirichlet boundary."""

    J: float

    def __post_init__(self):
        if not self.J > 0:
            raise ValueError(f"domain length must be positive, got J={self.J}")


@dataclass(frozen=True)
class TestFunctionParams:
    """Backward test function parameters: horizon T and spatial center."""

    T: float
    center: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")


@dataclass(frozen=True)
class JensenConstants:
    """Exponent a and the constants C'(a), C(a), C1 of the mass inequality chain."""

    gamma: float
    a: float
    c_prime: float
    c_of_a: float
    c1: float


def free_kernel(t: float, x) -> np.ndarray | float:
    """Gaussian kernel of u_t = u_xx on the line: (4 pi t)^(-1/2) exp(-x^2/(4t))."""
    if not t > 0:
        raise ValueError(f"free_kernel needs t > 0, got t={t}")
    x = np.asarray(x, dtype=float)
    val = np.exp(-x * x / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)
    return val if val.ndim else float(val)


def _free(t: float, z: np.ndarray) -> np.ndarray:
    return np.exp(-z * z / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)


def dirichlet_kernel(t: float, x, y, dom: Domain) -> np.ndarray | float:
    """Heat kernel on [0, J] with absorbing endpoints.

    Method of images for t <= J^2/4, sine eigenfunction series for larger t;
    each series is truncated when the next term is below 1e-15 of the running
    sum. The two representations agree to ~1e-15 and serve as mutual oracles.
    """
    if not t > 0:
        raise ValueError(f"dirichlet_kernel needs t > 0, got t={t}")
    J = dom.J
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < 0) or np.any(x > J) or np.any(y < 0) or np.any(y > J):
        raise ValueError(f"dirichlet_kernel arguments must lie in [0, {J}]")
    scalar = x.ndim == 0 and y.ndim == 0
    x, y = np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(y))

    if t <= J * J / 4.0:
        total = _free(t, x - y) - _free(t, x + y)
        n = 1
        while True:
            shift = 2.0 * n * J
            term = (
                _free(t, x - y + shift)
                - _free(t, x + y + shift)
                + _free(t, x - y - shift)
                - _free(t, x + y - shift)
            )
            total = total + term
            if np.max(np.abs(term)) < _TRUNC * max(np.max(np.abs(total)), 1e-300):
                break
            n += 1
            if n > 10_000:  # pragma: no cover - cannot trigger for t <= J^2/4
                raise RuntimeError("image series failed to converge")
    else:
        total = np.zeros_like(x)
        k = 1
        while True:
            lam = (k * np.pi / J) ** 2
            term = (2.0 / J) * np.sin(k * np.pi * x / J) * np.sin(k * np.pi * y / J) * np.exp(-lam * t)
            total = total + term
            if (2.0 / J) * np.exp(-lam * t) < _TRUNC * max(np.max(np.abs(total)), 1e-300):
                break
            k += 1
            if k > 100_000:  # pragma: no cover
                raise RuntimeError("eigenfunction series failed to converge")
        # the series oscillates; tiny negative values at the boundary are roundoff
        total = np.where(np.abs(total) < 1e-300, 0.0, total)

    return float(total[0]) if scalar else total


def _check_t_range(t: float, T: float) -> float:
    if t < 0:
        raise ValueError(f"need 0 <= t <= T, got t={t}")
    if t > T:
        if t <= T + _T_SLACK * max(1.0, T):
            return T  # lattice endpoint roundoff
        raise ValueError(f"need 0 <= t <= T, got t={t}, T={T}")
    return t


def phi(t: float, x, p: TestFunctionParams) -> np.ndarray | float:
    """Backward test function phi^(T)(t, x - center) = G(2T - t, x - center).

    Solves phi_t = -phi_xx with Gaussian final condition phi(T, .) = G(T, .).
    """
    t = _check_t_range(t, p.T)
    x = np.asarray(x, dtype=float) - p.center
    s = 2.0 * p.T - t
    val = np.exp(-x * x / (4.0 * s)) / np.sqrt(4.0 * np.pi * s)
    return val if val.ndim else float(val)


def phi_ratio(t: float, x, T: float) -> np.ndarray | float:
    """phi^(T)(t,x) / phi^(T)(T,x) in closed form.

    Equals sqrt(T/(2T-t)) * exp((x^2/4)(1/T - 1/(2T-t))). The uniform infimum
    over 0 <= t <= T and all x is 2^(-1/2), attained at (t, x) = (0, 0); the
    operation exists so that constant can be audited directly.
    """
    t = _check_t_range(t, T)
    x = np.asarray(x, dtype=float)
    s = 2.0 * T - t
    val = np.sqrt(T / s) * np.exp((x * x / 4.0) * (1.0 / T - 1.0 / s))
    return val if val.ndim else float(val)


def phi_l1_norm(t: float, T: float, a: float) -> float:
    """Full-line integral of phi^(T)(t, .)^a: C'(a) (2T - t)^((1-a)/2).

    C'(a) = (4 pi)^((1-a)/2) a^(-1/2). This is the closed form over the whole
    line, hence an upper bound for the integral over any bounded interval,
    which is how it enters the chain constant C1.
    """
    if not a > 0:
        raise ValueError(f"phi_l1_norm needs a > 0, got a={a}")
    t = _check_t_range(t, T)
    return float((4.0 * np.pi) ** ((1.0 - a) / 2.0) * a ** -0.5 * (2.0 * T - t) ** ((1.0 - a) / 2.0))


def phi_l1_interval_quad(t: float, T: float, a: float, lo: float, hi: float) -> float:
    """Audit path: numeric quadrature of phi^a over [lo, hi] (center 0)."""
    from scipy.integrate import quad

    if not a > 0:
        raise ValueError(f"phi_l1_interval_quad needs a > 0, got a={a}")
    t = _check_t_range(t, T)
    p = TestFunctionParams(T=T)
    val, _ = quad(lambda z: phi(t, z, p) ** a, lo, hi, limit=200)
    return float(val)


def jensen_constants(gamma: float) -> JensenConstants:
    """Constants of the chain int u^(2g) phi^2 >= C1 T^(-1/2) (int u phi)^(2g).

    a = (2g-2)/(2g-1); C'(a) is the L1 constant of phi^a; C(a) = 2^((1-a)/2) C'(a)
    absorbs the bound (2T-t)^((1-a)/2) <= (2T)^((1-a)/2); C1 = C(a)^(1-2g).
    The identities (2-a)/(2g) + a = 1 and ((1-a)/2)(1-2g) = -1/2 make the
    exponent bookkeeping close.
    """
    if not gamma > 1:
        raise ValueError(f"jensen_constants needs gamma > 1, got {gamma}")
    a = (2.0 * gamma - 2.0) / (2.0 * gamma - 1.0)
    c_prime = (4.0 * np.pi) ** ((1.0 - a) / 2.0) * a ** -0.5
    c_of_a = 2.0 ** ((1.0 - a) / 2.0) * c_prime
    c1 = c_of_a ** (1.0 - 2.0 * gamma)
    return JensenConstants(gamma=gamma, a=a, c_prime=c_prime, c_of_a=c_of_a, c1=c1)
