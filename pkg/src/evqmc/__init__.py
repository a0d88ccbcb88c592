"""Smallest eigenvalue of affine-parametric elliptic operators, integrated by
randomly shifted lattice rules, with checks of the associated bounds."""

from .coefficients import (
    AdmissibilityReport,
    CoefficientExpansion,
    custom_expansion,
    evaluate_coefficient,
    make_expansion,
    stechkin_tail,
    validate_assumption,
)
from .config import ConfigError, ExperimentConfig, parse_config, serialize
from .eigen import (
    ConvergenceError,
    EigenPair,
    GapReport,
    NearDegenerateWarning,
    assemble_operator,
    eigenfunction_functional,
    eigenvalue_bounds_check,
    pairs_at,
    solve_space,
    two_smallest,
)
from .fem import FemSpace, Mesh, ScalarField, assemble_mass, assemble_stiffness, build_mesh, laplace_eigen_reference
from .lattice import (
    LatticeRule,
    ProductWeights,
    QmcEstimate,
    cbc_construct,
    euler_totient,
    lattice_points,
    qmc_estimate,
    theoretical_error_bound,
    weights_from_rho,
    worst_case_error_sq,
)

__version__ = "0.1.0"
