"""
Observation predictor and control force estimator networks.
"""
from src.nets.models import (
    CFE_MODES,
    CFEModel,
    ForceEstimator,
    OPModelBank,
    Predictor,
    analytic_cfe_burger,
    bound_parameters,
    cfe_infer,
    op_predict,
    scales_for,
    split_parameters,
    terminal_force_burger,
)
from src.nets.network import NetSpec, ParamSet, forward, init_params, parameter_count, zero_params

__all__ = [
    "CFE_MODES",
    "CFEModel",
    "ForceEstimator",
    "NetSpec",
    "OPModelBank",
    "ParamSet",
    "Predictor",
    "analytic_cfe_burger",
    "bound_parameters",
    "cfe_infer",
    "forward",
    "init_params",
    "op_predict",
    "parameter_count",
    "scales_for",
    "split_parameters",
    "terminal_force_burger",
    "zero_params",
]
