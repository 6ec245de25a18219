"""shelab: desk-scale laboratory for stochastic heat equation blow-up machinery.

Implements and cross-checks the constructive objects behind finite-time
blow-up of u_t = u_xx + u^gamma dW on [0, J] with Dirichlet boundary:
heat kernels and the backward test function, discrete space-time white noise,
the explicit Euler-Maruyama solver with level-crossing detection, the mass
martingale and its Jensen inequality chain, first-passage (gambler's ruin)
estimates, the renormalization scaling map, the noise-splitting construction,
and the Galton-Watson branching surrogate.
"""

from shelab.kernels import (
    Domain,
    JensenConstants,
    TestFunctionParams,
    dirichlet_kernel,
    free_kernel,
    jensen_constants,
    phi,
    phi_l1_norm,
    phi_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "Domain",
    "JensenConstants",
    "TestFunctionParams",
    "dirichlet_kernel",
    "free_kernel",
    "jensen_constants",
    "phi",
    "phi_l1_norm",
    "phi_ratio",
    "__version__",
]
