"""Exact formulas, conditioned sampling, and rare-event estimators for
one-dimensional random walks in random environment."""

from .env import (
    EnvLaw,
    EnvWindow,
    RegimeReport,
    classify_regime,
    kappa_root,
    mean_log_rho,
    moment_rho,
    moment_rho_log_rho,
    sample_window,
)
from .estimate import Estimate
from .exact import (
    ConvergenceError,
    ReturnDecomposition,
    SeriesValue,
    absorption_oracle,
    cascade,
    conditioned_env,
    conditioned_return_expectation,
    expected_hit,
    hitting_prob,
    r_tail,
    return_decomposition,
    speed_and_et1,
)
from .ladder import (
    OvershootScan,
    StepLaw,
    TiltedLaw,
    gamma_root,
    overshoot_constant,
    phi_estimate,
    step_from_env,
    sup_tail,
    tilt,
)
from .mc import (
    DivergenceReport,
    ReturnOutcome,
    conditioned_sampler,
    divergence_diagnostic,
    estimate_return_conditional,
    first_return_window,
    sample_first_return,
    simulate_until,
    speed_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "EnvLaw",
    "EnvWindow",
    "RegimeReport",
    "classify_regime",
    "kappa_root",
    "mean_log_rho",
    "moment_rho",
    "moment_rho_log_rho",
    "sample_window",
    "Estimate",
    "ConvergenceError",
    "ReturnDecomposition",
    "SeriesValue",
    "absorption_oracle",
    "cascade",
    "conditioned_env",
    "conditioned_return_expectation",
    "expected_hit",
    "hitting_prob",
    "r_tail",
    "return_decomposition",
    "speed_and_et1",
    "OvershootScan",
    "StepLaw",
    "TiltedLaw",
    "gamma_root",
    "overshoot_constant",
    "phi_estimate",
    "step_from_env",
    "sup_tail",
    "tilt",
    "DivergenceReport",
    "ReturnOutcome",
    "conditioned_sampler",
    "divergence_diagnostic",
    "estimate_return_conditional",
    "first_return_window",
    "sample_first_return",
    "simulate_until",
    "speed_estimate",
    "__version__",
]
