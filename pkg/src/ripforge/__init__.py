"""Forge matrix-sensing instances with certified spurious local minima.

The package solves small semidefinite programs for measurement kernels that
make a chosen point a strict local minimum, checks the closed-form rank-1
constructions against them, and runs SGD experiments on the resulting
instances.
"""

from . import sdp
from .experiments import delta_search, forge_instance, verify_example1
from .lmi import (ForgeResult, KernelMatrix, build_operators, eta_to_delta, factor_kernel, forge, solve_delta_lb,
                  solve_delta_ub)
from .rank1 import construct_H0, construct_H_tau, foc_values, geometry, soc_values
from .sensing import (EXAMPLE1_SPURIOUS, SensingInstance, certify, example1_instance, gradient, hessian,
                      objective_value, rip_full)
from .sgd import SgdConfig, failure_rate_experiment, gamma_sweep, sgd_run

__version__ = "0.1.0"
