"""Finite-sample least-squares identification of VAR(1) systems.

Simulation, exact Gramians, the OLS estimator, closed-form rate and bound
formulas, pathwise decomposition diagnostics and a seeded Monte Carlo harness.
"""

from .bounds import (
    AsymptoticRegime,
    BoundConstants,
    BurninKind,
    PriorBoundParams,
    RateReport,
    Regime,
    asymptotic_covariance,
    burnin_check,
    clt_rate_frobenius,
    clt_rate_operator,
    prior_bounds,
    rate_report,
    thm31_bound,
    thm32_bound,
)
from .errors import (
    BurnInError,
    DimensionMismatchError,
    NotStrictlyStableError,
    SingularCovarianceError,
    SingularGramError,
    SysIdError,
)
from .estimator import ErrorReport, error_report, ols_fit, schatten_norm, weighted_sq_norm
from .gramians import GramianSet, StabilityCertificate, check_gramian_isometry, compute_gramians, stability_certificate
from .model import NoiseFamily, NoiseModel, ProblemInstance, TrajectoryBatch, simulate_batch
from .montecarlo import MCResult, Norm, clt_covariance_check, estimate_risk, gap_demonstration, rate_sweep
from .presets import PRESETS, build_preset

__version__ = "0.1.0"
