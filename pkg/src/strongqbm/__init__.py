"""Quantum Brownian motion with strong non-Markovian damping: perturbative generators and Wigner-function evolution.

Computes the zeroth-order (exact linear) and first-order generators of the
reduced Wigner-function dynamics, evolves Wigner functions under them and
cross-checks every stage against Monte Carlo and closed-form oracles.
"""

from .bath import Family, KernelTable, SpectralModel, damping_kernel, kernel_table, noise_kernel
from .covariance import CovarianceTable, delta1_coeff, s_kernel, sigma_table, sigma_T
from .errors import ConfigError, NumericalError, QBMError
from .evolve import WignerGrid, evolve, init_gaussian, step
from .grid import TimeGrid
from .master import ForcingSpec, build_L0, build_L1, delta_k, hpz_coefficients, hpz_table, two_time_operator
from .opalg import PhaseOp, apply, commutator, product
from .propagator import PropagatorTable, greens_function, phi_final, phi_rel

__version__ = "0.1.0"
