"""Distribution-free risk control by family-wise error rate testing over a parameter grid."""

from .fwer import (
    RejectionSet,
    TestGraph,
    bonferroni,
    build_fallback_graph,
    build_hamming_graph,
    cascaded_2d_fixed_sequence,
    fixed_sequence,
    holm,
    sgt,
    split_fixed_sequence,
)
from .losses import LossTensor, ParameterGrid, RiskSpec, empirical_risk, load_loss, pfdr_transform, save_loss
from .pvalues import clt_pvalue, combine_max, hb_pvalue, pvalues_from_tensor
from .selection import select_lexicographic, select_sup
from .simulation import ARConfig, fwer_monte_carlo, run_benchmark, simulate_ar
from .uniform import UniformBoundConfig, calibrate_uniform, optimal_eta, solve_t, tail_bound_upper, upper_confidence_bound

__version__ = "0.1.0"

__all__ = [
    "ARConfig",
    "LossTensor",
    "ParameterGrid",
    "RejectionSet",
    "RiskSpec",
    "TestGraph",
    "UniformBoundConfig",
    "bonferroni",
    "build_fallback_graph",
    "build_hamming_graph",
    "calibrate_uniform",
    "cascaded_2d_fixed_sequence",
    "clt_pvalue",
    "combine_max",
    "empirical_risk",
    "fixed_sequence",
    "fwer_monte_carlo",
    "hb_pvalue",
    "holm",
    "load_loss",
    "optimal_eta",
    "pfdr_transform",
    "pvalues_from_tensor",
    "run_benchmark",
    "save_loss",
    "select_lexicographic",
    "select_sup",
    "sgt",
    "simulate_ar",
    "solve_t",
    "split_fixed_sequence",
    "tail_bound_upper",
    "upper_confidence_bound",
]
