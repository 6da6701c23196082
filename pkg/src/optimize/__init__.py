"""
Losses, the ADAM updater, shooting and network training.
"""
from src.optimize.adam import AdamState, adam_step, decayed_lr, geometric_lr
from src.optimize.losses import (
    LossReport,
    blur_schedule,
    calibrate_alpha,
    cfe_supervised_loss,
    force_loss,
    fraction_inside,
    objective,
    observation_loss,
    report,
)
from src.optimize.shooting import (
    ShootingProblem,
    ShootingResult,
    evaluate_controls,
    multiscale_shoot,
    rollout_objective,
    single_shoot,
    warm_start,
)
from src.optimize.training import (
    CFESample,
    ControlExample,
    OPSample,
    TrainingResult,
    calibrate_alpha_for,
    evaluate_reconstructions,
    train_diffphys,
    train_ops_successive,
    train_supervised,
)

__all__ = [
    "AdamState",
    "CFESample",
    "ControlExample",
    "LossReport",
    "OPSample",
    "ShootingProblem",
    "ShootingResult",
    "TrainingResult",
    "adam_step",
    "blur_schedule",
    "calibrate_alpha",
    "calibrate_alpha_for",
    "cfe_supervised_loss",
    "decayed_lr",
    "evaluate_controls",
    "evaluate_reconstructions",
    "force_loss",
    "fraction_inside",
    "geometric_lr",
    "multiscale_shoot",
    "objective",
    "observation_loss",
    "report",
    "rollout_objective",
    "single_shoot",
    "train_diffphys",
    "train_ops_successive",
    "train_supervised",
    "warm_start",
]
