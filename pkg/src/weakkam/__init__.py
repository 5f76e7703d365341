"""Weak KAM numerical laboratory on the d-torus.

Computes the effective Hamiltonian three ways (cell-problem fixed point,
proximal-aiming trajectory averages, holonomic-measure linear program) and
checks the upper and lower estimates that connect them.
"""

from .aiming import (AimingSchedule, ControlledProcess, Partition, feedback_direction, simulate,
                     upper_estimate_check)
from .cell import CellSolution, LaxOleinik, lax_oleinik_step, solve_cell, viscosity_residual
from .envelope import lower_envelope, mollify, upper_envelope
from .errors import (ConvergenceFailure, InvalidArgument, LPFailure, PreconditionError, PropertyViolation,
                     WeakKAMError)
from .lagrangian import (CosinePotential, LagrangianSpec, VelocityBox, anisotropic, argmax_velocity,
                         eval_L, hamiltonian, kinked, mechanical, modulus, pendulum_potential,
                         piecewise_power, velocity_bound)
from .lower_bound import ProcessGenerator, anneal_adversary, total_functional, verify_lower
from .mather import (DiscreteMeasure, HolonomyBasis, build_lp, occupation_measure, solve_lp,
                     subsolution_residual_mollified)
from .torus import GridScalarField, GridSpec, interpolate, min_displacement, torus_dist, wrap

__version__ = "0.1.0"

__all__ = [
    "AimingSchedule", "ControlledProcess", "Partition", "feedback_direction", "simulate",
    "upper_estimate_check", "CellSolution", "LaxOleinik", "lax_oleinik_step", "solve_cell",
    "viscosity_residual", "lower_envelope", "mollify", "upper_envelope", "ConvergenceFailure",
    "InvalidArgument", "LPFailure", "PreconditionError", "PropertyViolation", "WeakKAMError",
    "CosinePotential", "LagrangianSpec", "VelocityBox", "anisotropic", "argmax_velocity", "eval_L",
    "hamiltonian", "kinked", "mechanical", "modulus", "pendulum_potential", "piecewise_power",
    "velocity_bound", "ProcessGenerator", "anneal_adversary", "total_functional", "verify_lower",
    "DiscreteMeasure", "HolonomyBasis", "build_lp", "occupation_measure", "solve_lp",
    "subsolution_residual_mollified", "GridScalarField", "GridSpec", "interpolate", "min_displacement",
    "torus_dist", "wrap",
]
