"""Gaussian semigroups for parabolic equations on measures, in finite dimension.

Riccati flow of the kernel parameters, operator Mehler formulas, kernel
composition, Ornstein-Uhlenbeck path sampling and Feynman-Kac estimates.
"""

__version__ = "0.1.0"

from .errors import GaussflowError
from .feynman_kac import (
    FKEstimate,
    GrowthBound,
    Potential,
    fk_evolve,
    fk_kernel_mass,
    path_integral_weight,
    validate_potential,
)
from .flow import (
    EvolutionState,
    Trajectory,
    closed_form_C0,
    closed_form_D0,
    evolve,
    integrate,
    moment_diagnostic,
    pde_residual_fourier,
    recover_generators,
    residual_report,
    rhs,
)
from .kernel import (
    GaussianKernel,
    GaussianMeasure,
    GaussianMixture,
    PointMixture,
    apply_to_initial,
    characteristic_functional,
    compose,
    density,
)
from .operators import (
    OperatorSet,
    conjugated_integral,
    even_sqrt_function,
    even_sqrt_functions,
    matrix_exponential,
    oscillator_operators,
    validate_operator_set,
)
from .paths import (
    Ball,
    Box,
    CylinderSpec,
    HalfSpace,
    PathEnsemble,
    TimeGrid,
    WholeSpace,
    condition_endpoint,
    cylinder_mass,
    gaussianity_check,
    sample_paths,
)

__all__ = [
    "Ball",
    "Box",
    "CylinderSpec",
    "EvolutionState",
    "FKEstimate",
    "GaussflowError",
    "GaussianKernel",
    "GaussianMeasure",
    "GaussianMixture",
    "GrowthBound",
    "HalfSpace",
    "OperatorSet",
    "PathEnsemble",
    "PointMixture",
    "Potential",
    "TimeGrid",
    "Trajectory",
    "WholeSpace",
    "apply_to_initial",
    "characteristic_functional",
    "closed_form_C0",
    "closed_form_D0",
    "compose",
    "condition_endpoint",
    "conjugated_integral",
    "cylinder_mass",
    "density",
    "even_sqrt_function",
    "even_sqrt_functions",
    "evolve",
    "fk_evolve",
    "fk_kernel_mass",
    "gaussianity_check",
    "integrate",
    "matrix_exponential",
    "moment_diagnostic",
    "oscillator_operators",
    "path_integral_weight",
    "pde_residual_fourier",
    "recover_generators",
    "residual_report",
    "rhs",
    "sample_paths",
    "validate_operator_set",
    "validate_potential",
]
