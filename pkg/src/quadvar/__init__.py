"""Global smoothness estimation for Gaussian processes.

The package estimates the number of mean-square derivatives ``r0`` and the
local Hölder index ``beta0`` of a Gaussian process observed on a regular
sequence design, using quadratic variations of dilated divided differences.
It also ships exact simulators, plug-in Lagrange approximation/quadrature
and a seeded Monte Carlo harness.
"""

from quadvar.design import DensitySpec, SamplingDesign, build_design, spacing_report
from quadvar.divdiff import (
    coeffs,
    divided_difference,
    expected_qv,
    quadratic_variation,
)
from quadvar.estimators import (
    NOT_FOUND,
    EstimatorConfig,
    RegularityEstimate,
    estimate_beta,
    estimate_H,
    estimate_r0,
    h_statistic,
    kw_ols,
    theoretical_limit,
)
from quadvar.gp_sim import (
    GaussianModel,
    Regularity,
    SamplePath,
    ingest_csv,
    kernel_eval,
    simulate_exact,
    simulate_fbm_circulant,
    transform_path,
)
from quadvar.interp import (
    PiecewiseLagrange,
    exact_imse,
    lagrange_weights,
    plugin_approximation,
    plugin_quadrature,
)

__version__ = "0.1.0"

__all__ = [
    "DensitySpec",
    "SamplingDesign",
    "build_design",
    "spacing_report",
    "coeffs",
    "divided_difference",
    "quadratic_variation",
    "expected_qv",
    "NOT_FOUND",
    "EstimatorConfig",
    "RegularityEstimate",
    "estimate_r0",
    "estimate_beta",
    "estimate_H",
    "h_statistic",
    "kw_ols",
    "theoretical_limit",
    "GaussianModel",
    "Regularity",
    "SamplePath",
    "kernel_eval",
    "simulate_exact",
    "simulate_fbm_circulant",
    "transform_path",
    "ingest_csv",
    "PiecewiseLagrange",
    "lagrange_weights",
    "plugin_approximation",
    "plugin_quadrature",
    "exact_imse",
    "__version__",
]
