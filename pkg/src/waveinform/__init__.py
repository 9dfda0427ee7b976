"""Wave-informed Gaussian process regression for the 3D free-space wave equation."""

from . import design, experiments, fast, fields, gp, kernels, oracle, sim
from .exceptions import (KernelEvaluationError, SingularCovarianceError,
                         SingularEvaluationError)
from .fields import ScalarField3D
from .gp import (PosteriorModel, assemble_covariance, fit_posterior,
                 neg_log_marginal_likelihood, predict_mean, predict_var)
from .kernels import (HyperParams, SourceParams, SpaceTimePoint, WaveKernel,
                      matern52, smooth_cutoff, wave_kernel, wave_kernel_diag)
from .sim import InitialCondition, SensorDataset, SimConfig, run_simulation

__all__ = [
    "HyperParams",
    "InitialCondition",
    "KernelEvaluationError",
    "PosteriorModel",
    "ScalarField3D",
    "SensorDataset",
    "SimConfig",
    "SingularCovarianceError",
    "SingularEvaluationError",
    "SourceParams",
    "SpaceTimePoint",
    "WaveKernel",
    "assemble_covariance",
    "design",
    "experiments",
    "fast",
    "fields",
    "fit_posterior",
    "gp",
    "kernels",
    "matern52",
    "neg_log_marginal_likelihood",
    "oracle",
    "predict_mean",
    "predict_var",
    "run_simulation",
    "sim",
    "smooth_cutoff",
    "wave_kernel",
    "wave_kernel_diag",
]
