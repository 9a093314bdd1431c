"""Solvers for Markov-correlated Pandora's box problems with precedence
constraints: directed lines, multi-line collections, directed trees, and
skip-enabled lines, plus brute-force oracles, mixing-based truncation, and a
Monte Carlo / Pareto evaluation harness."""

from .model import (
    TOP,
    EnumerationLimitError,
    ExplorationInstance,
    InvalidInstanceError,
    NodeSpec,
    PandoraError,
    RolloutResult,
    SkipCostTable,
    Support,
    TraceDataset,
    UnknownLossLevelError,
    ValidationReport,
    estimate_transitions,
    line_instance_from_trace,
    quantize_losses,
    validate_instance,
)
from .line import LinePayoff, build_payoff_table, dynamic_index, run_policy
from .multiline import (
    EquivalentNode,
    MultiLinePolicy,
    contract_line,
    run_multiline_policy,
    verify_three_node_ordering,
)
from .tree import (
    ContractionStep,
    MinimalTree,
    TreePolicy,
    TreeSolver,
    TreeTopology,
    contract_minimal_tree,
    find_minimal_trees,
    run_tree_policy,
    solve_tree,
)
from .skip import SkipPayoff, build_skip_table, run_skip_policy
from .oracles import (
    PolicyValue,
    ThresholdPolicy,
    brute_force_online_optimal,
    inapprox_instance,
    no_recall_threshold_policy,
    offline_optimal,
)
from .mixing import (
    MixingProfile,
    NonErgodicError,
    TruncationReport,
    max_tail_probability,
    mixing_constants,
    stationary_distribution,
    truncated_solve,
    truncation_horizon,
)
from .evaluate import (
    EvalResult,
    LineIndexPolicy,
    ParetoPoint,
    SkipIndexPolicy,
    compare_policies,
    make_synthetic_ee_trace,
    monte_carlo_eval,
    optimal_policy,
    pareto_sweep,
)

__version__ = "0.1.0"
