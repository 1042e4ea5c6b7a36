"""Desk-scale neural architecture search toolkit.

Operator refinement under frozen skip connections, joint and alternating
policy-gradient search with an LSTM controller whose log-probability
gradients are exact (finite-difference checkable), the reward-weighted
cross-entropy decomposition of the score-function gradient, and enumerable
synthetic oracles for end-to-end verification.
"""

__version__ = "0.1.0"

from .archspace import (
    ArchitectureVector,
    OperatorDescriptor,
    OperatorVocabulary,
    SearchSpaceSpec,
    SkipTopology,
    candidate_edges,
    cardinality,
    make_space,
    parse_arch_vector,
    residual_skip_mask,
    serialize_arch_vector,
    validate,
)
from .controller import (
    ControllerConfig,
    ControllerParams,
    Decision,
    finite_diff_check,
    grad_log_prob,
    greedy_arch,
    init_controller,
    log_prob,
    sample,
    sample_batch,
)
from .nar import (
    AscentStep,
    SearchConfig,
    SearchResult,
    alternating_search,
    exact_alternating_ascent,
    joint_search,
    nar_search,
    run_search,
)
from .oracles import (
    DatasetSpec,
    Oracle,
    ProxyBiasOracle,
    ProxyBiasSpec,
    TabularOracle,
    TabularOracleSpec,
    ToySupernet,
    ToySupernetSpec,
    enumerate_optimum,
    skip_density,
    tabular_evaluate,
)
from .pgtrainer import (
    AdamState,
    BaselineState,
    GradLog,
    SampleBatch,
    ce_surrogate_gradient,
    collect_batch,
    log_grad_magnitudes,
    reinforce_gradient,
    update,
    update_baseline,
)
from .reward import (
    NoiseStats,
    RewardAssignmentTable,
    assign_rewards,
    assignment_noise_stats,
)
