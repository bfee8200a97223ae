"""Physics-informed DeepONet for  phi_tau - (alpha(phi))_xx = g  with zero
initial and boundary data, plus a finite-difference reference solver."""

from .deeponet import DeepOnetModel, Domain, QueryPoint, init_model, operator_eval, operator_eval_grid
from .fdm import FdmConfig, FdmSolution, interpolate, solve_fdm, solve_fdm_forced, tridiag_solve
from .gp import GpConfig, SensorGrid, SourceFunction, SourceSampler, kernel_matrix
from .nnet import Activation, AdamState, MlpConfig, MlpParams, adam_step, grad_params, mlp_forward, mlp_init
from .physics import CollocationBatch, DiffusionFunction, StencilConfig, loss_gradient, residual, total_loss
from .pipeline import Dataset, ErrorReport, MetricHistory, TrainConfig, evaluate, generate_dataset, train

__all__ = [
    "Activation", "AdamState", "CollocationBatch", "Dataset", "DeepOnetModel", "DiffusionFunction", "Domain",
    "ErrorReport", "FdmConfig", "FdmSolution", "GpConfig", "MetricHistory", "MlpConfig", "MlpParams", "QueryPoint",
    "SensorGrid", "SourceFunction", "SourceSampler", "StencilConfig", "TrainConfig", "adam_step", "evaluate",
    "generate_dataset", "grad_params", "init_model", "interpolate", "kernel_matrix", "loss_gradient", "mlp_forward",
    "mlp_init", "operator_eval", "operator_eval_grid", "residual", "solve_fdm", "solve_fdm_forced", "total_loss",
    "train", "tridiag_solve",
]
__version__ = "0.1.0"
