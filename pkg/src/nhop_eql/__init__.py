"""Multi-timescale ensemble Q-learning for tabular MDPs.

Estimates a Markov transition model by sample averaging, synthesizes a
family of n-hop environments via per-action matrix powers, trains parallel
Q-learners on them, and fuses the tables with divergence-based adaptive
weights. Exact dynamic-programming solvers and executable theory checks
are included for verification.
"""

from .analysis import (
    BoundParams,
    CheckReport,
    CheckRow,
    adc_error_independence,
    ape,
    check_prop3,
    check_prop4_ordering,
    check_variance_vs_k,
    cor2_bound,
    distance_correlation,
    error_moments,
    late_window_variance,
    prop1_bound,
    prop3_bound,
    weight_convergence,
)
from .config import ConfigError, ExperimentConfig, parse_config, resolve_config
from .ensemble import (
    EnsembleResult,
    ScheduleSet,
    ajsd,
    compute_weights,
    ensemble_update,
    epsilon_greedy_action,
    jsd,
    q_to_probabilities,
    q_update,
    run_neql,
    run_neql_pipeline,
    run_simple_q,
    run_vi_ensemble,
)
from .environments import (
    CliffWalkSpec,
    ErdosRenyiSpec,
    SisoSpec,
    TabularEnvironment,
    build_cliffwalk_env,
    build_er_env,
    build_siso_env,
)
from .estimation import (
    EstimatedModel,
    SamplingConfig,
    build_multiscale_envs,
    estimate_model,
    estimation_error,
    select_orders,
)
from .mdp import (
    ConvergenceError,
    CostModel,
    DiscountFactor,
    ProbabilityTransitionTensor,
    enumerate_policies,
    greedy_policy_from_q,
    load_tensor_text,
    matrix_power_ptt,
    policy_q_evaluation,
    row_normalize,
    save_tensor_text,
    validate_ptt,
    value_iteration,
)
from .metrics import MetricsLog

__version__ = "0.1.0"

__all__ = [
    "BoundParams",
    "CheckReport",
    "CheckRow",
    "CliffWalkSpec",
    "ConfigError",
    "ConvergenceError",
    "CostModel",
    "DiscountFactor",
    "EnsembleResult",
    "ErdosRenyiSpec",
    "EstimatedModel",
    "ExperimentConfig",
    "MetricsLog",
    "ProbabilityTransitionTensor",
    "SamplingConfig",
    "ScheduleSet",
    "SisoSpec",
    "TabularEnvironment",
    "adc_error_independence",
    "ajsd",
    "ape",
    "build_cliffwalk_env",
    "build_er_env",
    "build_multiscale_envs",
    "build_siso_env",
    "check_prop3",
    "check_prop4_ordering",
    "check_variance_vs_k",
    "compute_weights",
    "cor2_bound",
    "distance_correlation",
    "ensemble_update",
    "enumerate_policies",
    "epsilon_greedy_action",
    "error_moments",
    "estimate_model",
    "estimation_error",
    "greedy_policy_from_q",
    "jsd",
    "late_window_variance",
    "load_tensor_text",
    "matrix_power_ptt",
    "parse_config",
    "policy_q_evaluation",
    "prop1_bound",
    "prop3_bound",
    "q_to_probabilities",
    "q_update",
    "resolve_config",
    "row_normalize",
    "run_neql",
    "run_neql_pipeline",
    "run_simple_q",
    "run_vi_ensemble",
    "save_tensor_text",
    "select_orders",
    "validate_ptt",
    "value_iteration",
    "weight_convergence",
]
