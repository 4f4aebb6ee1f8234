"""Truncated emphatic TD for off-policy prediction and control."""

from .agents import (
    AgentConfig,
    FeatureMap,
    RunRecord,
    SoftmaxPolicySpec,
    expected_sarsa_step,
    prediction_step,
    project_ball,
    run_control,
    run_episodic_control,
    run_prediction,
    softmax_policy_from_weights,
)
from .analysis import (
    EmphasisReport,
    emphasis_limit,
    emphasis_report,
    expected_update,
    fixed_point,
    is_negative_definite,
    min_n_contraction,
    min_n_negative_definite,
    projection_matrix,
    selection_helpers_n1_n2,
    truncated_emphasis,
)
from .mdp import (
    InterestFunction,
    NotErgodicError,
    TabularMdp,
    TabularPolicy,
    sample_step,
    state_action_transition_matrix,
    state_transition_matrix,
    stationary_distribution,
)
from .traces import TraceConfig, TraceEngine, trace_window_recompute

__version__ = "0.1.0"
