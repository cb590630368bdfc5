"""Milstein discretization of ergodic SDEs with invariant-measure statistics.

Modules: ``model`` (SDE registry and assumption checks), ``scheme``
(Euler-Maruyama / Milstein maps and counter-based noise), ``quadrature``
(1-D stationary density and certified Stein-equation solver), ``estimator``
(single-pass chain statistics), ``montecarlo`` (deterministic parallel
replicas), ``diagnostics`` (CLT, tail-ratio, strong-order, drift, bridge
and concentration checks) and ``cli`` (batch front-end).
"""

from .errors import MilsteinMdpError
from .model import (
    SamplingGrid,
    SdeConstants,
    SdeModel,
    TestFunction,
    builtin_model,
    builtin_test_function,
    validate_assumptions,
)
from .scheme import (
    ChainConfig,
    InitialState,
    NoiseStream,
    em_step,
    milstein_correction,
    milstein_step,
    simulate_chain,
)
from .quadrature import (
    DensityGrid,
    SteinSolution,
    asymptotic_variance,
    generator_apply,
    invariant_density_1d,
    solve_stein_1d,
    stationary_expectation,
)
from .estimator import ChainStats, decomposition_residual_scaling, run_chain_stats
from .montecarlo import ReplicaSampleSet, run_replicas
from .diagnostics import (
    clt_check,
    concentration_curve,
    drift_condition_check,
    strong_order_regression,
    tail_ratio_table,
    variance_bridge,
)

__version__ = "0.1.0"

__all__ = [
    "MilsteinMdpError",
    "SamplingGrid", "SdeConstants", "SdeModel", "TestFunction",
    "builtin_model", "builtin_test_function", "validate_assumptions",
    "ChainConfig", "InitialState", "NoiseStream",
    "em_step", "milstein_correction", "milstein_step", "simulate_chain",
    "DensityGrid", "SteinSolution", "asymptotic_variance", "generator_apply",
    "invariant_density_1d", "solve_stein_1d", "stationary_expectation",
    "ChainStats", "decomposition_residual_scaling", "run_chain_stats",
    "ReplicaSampleSet", "run_replicas",
    "clt_check", "concentration_curve", "drift_condition_check",
    "strong_order_regression", "tail_ratio_table", "variance_bridge",
    "__version__",
]
