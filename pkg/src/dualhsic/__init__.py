"""HSIC bottleneck and alignment losses for rehearsal-based continual learning."""

__version__ = "0.1.0"

from .hsic import KernelConfig, empirical_hsic, hsic_gradient_wrt_first, kernel_matrix  # noqa: E402
from .losses import DualHsicConfig  # noqa: E402
from .config import ExperimentConfig  # noqa: E402
from .trainer import average_accuracy, forgetting, run_experiment  # noqa: E402

__all__ = [
    "DualHsicConfig",
    "ExperimentConfig",
    "KernelConfig",
    "average_accuracy",
    "empirical_hsic",
    "forgetting",
    "hsic_gradient_wrt_first",
    "kernel_matrix",
    "run_experiment",
]
