"""
Execution schemes, traces and invocation accounting.
"""
from src.control.schemes import (
    Trajectory,
    center_of_mass,
    cfe_chain,
    compose_multishape,
    execute,
    follow_predictions,
    hierarchical_predict,
    multishape_execute,
    reconstruct_values,
    refine_execute,
    staggered_execute,
    straight_line_predictions,
    sum_predictions,
    two_stage_execute,
)
from src.control.trace import SCHEMES, Event, SchemeTrace, check_horizon, count_ops

__all__ = [
    "SCHEMES",
    "Event",
    "SchemeTrace",
    "Trajectory",
    "center_of_mass",
    "cfe_chain",
    "check_horizon",
    "compose_multishape",
    "count_ops",
    "execute",
    "follow_predictions",
    "hierarchical_predict",
    "multishape_execute",
    "reconstruct_values",
    "refine_execute",
    "staggered_execute",
    "straight_line_predictions",
    "sum_predictions",
    "two_stage_execute",
]
