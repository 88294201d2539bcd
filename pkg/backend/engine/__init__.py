# backend/engine/__init__.py
"""Moteur numérique : maillage, évolution périodique, valeurs propres, logistique, explosion."""

from .errors import (
    CertificateFailure,
    ConfigError,
    PeriodicParabolicError,
    StageError,
)
from .mesh import (
    DiscreteForm,
    Mesh,
    assemble,
    build_interval_mesh,
    build_rectangle_mesh,
    check_ellipticity,
)
from .coeffs import (
    CoefficientSet,
    SpaceTimeField,
    SpaceTimeSet,
    Weight,
    classify_sets,
    moving_window_weight,
    periodic_path_exists,
    q0_components,
    truncate_weight,
)
from .evolution import (
    PeriodMap,
    TimeGrid,
    Trajectory,
    apriori_diagnostic,
    period_norm_bound,
    propagate,
    smoothing_constant,
    solve_periodic_linear,
    truncation_convergence,
)
from .eigen import (
    EigenPair,
    GammaSweep,
    comparison_constant,
    degeneracy_functional,
    limit_eigenfunction,
    mu_star_sweep,
    principal_pair,
)
from .logistic import (
    BifurcationCurve,
    LogisticProblem,
    Nonlinearity,
    PeriodicSolution,
    bifurcation_sweep,
    build_subsolution,
    build_supersolution,
    monotone_iterate,
    mu_derivative,
    secant_slope,
    solve_periodic,
    stability_margin,
)
from .blowup import (
    BlowupCertificate,
    SubCylinder,
    bernoulli_z,
    blowup_locus,
    certify_all,
    certify_local_bound,
    elliptic_blowup_w,
    limit_equation_residual,
    propose_cylinders,
    q_infinity_cover,
    sobolev_diagnostic,
    torsion_solve,
    uniform_blowup_hypothesis,
)

__all__ = [
    "PeriodicParabolicError", "ConfigError", "CertificateFailure", "StageError",
    "Mesh", "DiscreteForm", "assemble", "build_interval_mesh", "build_rectangle_mesh",
    "check_ellipticity",
    "CoefficientSet", "SpaceTimeField", "SpaceTimeSet", "Weight", "classify_sets",
    "moving_window_weight", "periodic_path_exists", "q0_components", "truncate_weight",
    "PeriodMap", "TimeGrid", "Trajectory", "apriori_diagnostic", "period_norm_bound",
    "propagate", "smoothing_constant", "solve_periodic_linear", "truncation_convergence",
    "EigenPair", "GammaSweep", "comparison_constant", "degeneracy_functional",
    "limit_eigenfunction", "mu_star_sweep", "principal_pair",
    "BifurcationCurve", "LogisticProblem", "Nonlinearity", "PeriodicSolution",
    "bifurcation_sweep", "build_subsolution", "build_supersolution", "monotone_iterate",
    "mu_derivative", "secant_slope", "solve_periodic", "stability_margin",
    "BlowupCertificate", "SubCylinder", "bernoulli_z", "blowup_locus", "certify_all",
    "certify_local_bound", "elliptic_blowup_w", "limit_equation_residual", "propose_cylinders",
    "q_infinity_cover", "sobolev_diagnostic", "torsion_solve", "uniform_blowup_hypothesis",
]
