"""Energy-based model training with pseudo-spherical and classic contrastive divergence."""

from .energy import EnergyModel, gaussian_quadratic, init_mlp
from .errors import PscdError
from .estimator import EstimatorConfig, cd_gradient, pscd_gradient
from .scoring import DensitySpec, QuadratureDomain, gamma_divergence, gamma_score
from .trainer import ScheduleSpec, TrainConfig, randomized_sgd, train

__version__ = "0.1.0"

__all__ = [
    "DensitySpec",
    "EnergyModel",
    "EstimatorConfig",
    "PscdError",
    "QuadratureDomain",
    "ScheduleSpec",
    "TrainConfig",
    "cd_gradient",
    "gamma_divergence",
    "gamma_score",
    "gaussian_quadratic",
    "init_mlp",
    "pscd_gradient",
    "randomized_sgd",
    "train",
]
