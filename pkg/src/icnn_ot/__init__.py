"""Learning optimal transport maps between sampled distributions with input convex neural networks."""

from .data import DistributionSpec, RngStream, closed_form_w2, sample
from .diffcore import Activation, Tape, Tensor, backward, finite_diff_grad
from .icnn import IcnnConfig, IcnnParams, icnn_forward, icnn_input_grad, init_params, project_nonneg
from .optim import AdamConfig, AdamState, LrSchedule, adam_step, current_lr
from .train import MetricsRecord, TrainConfig, TrainState, TrainingDiverged, objective_J, train, transport

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "adam_step",
    "AdamConfig",
    "AdamState",
    "backward",
    "closed_form_w2",
    "current_lr",
    "DistributionSpec",
    "finite_diff_grad",
    "icnn_forward",
    "icnn_input_grad",
    "IcnnConfig",
    "IcnnParams",
    "init_params",
    "LrSchedule",
    "MetricsRecord",
    "objective_J",
    "project_nonneg",
    "RngStream",
    "sample",
    "Tape",
    "Tensor",
    "train",
    "TrainConfig",
    "TrainingDiverged",
    "TrainState",
    "transport",
]

