"""Offline apprenticeship learning over time-aware sub-trajectory clusters.

The pipeline segments demonstration trajectories with a block-Toeplitz
inverse-covariance model whose switch penalty is modulated by reward changes
and time gaps, fits a mixture of energy-based policies to the resulting
sub-trajectories by EM, and learns a high-level reward table that refreshes
the per-timestep rewards feeding the next segmentation round.
"""

__version__ = "0.1.0"

from .edm import EdmConfig, PolicyNet, SamplerError, TrainingError
from .emedm import EmSettings, PolicyMixture
from .hireward import HighLevelMDP, MlirlSettings, RewardRegulator
from .metrics import (adjusted_rand_index, aligned_macro_f1, classification_metrics,
                      format_mean_std, segmentation_metrics)
from .pipeline import (ABLATION_NAMES, Prediction, ThemesConfig, ThemesModel,
                       derived_configs, evaluate_model, fit, predict_actions,
                       run_ablation)
from .rmtticc import (ClusterModel, PenaltyInputs, Segmentation, SubTrajectory,
                      TiccSettings)
from .synthgen import GenerationError, GeneratorConfig, GroundTruth, generate
from .tglasso import ADMMSettings, GlassoProblem, SolverError
from .trajdata import (DataError, Dataset, Trajectory, load_dataset, save_dataset,
                       split_dataset)

__all__ = [
    "__version__",
    "ABLATION_NAMES", "ADMMSettings", "ClusterModel", "DataError", "Dataset",
    "EdmConfig", "EmSettings", "GenerationError", "GeneratorConfig",
    "GlassoProblem", "GroundTruth", "HighLevelMDP", "MlirlSettings",
    "PenaltyInputs", "PolicyMixture", "PolicyNet", "Prediction",
    "RewardRegulator", "SamplerError", "Segmentation", "SolverError",
    "SubTrajectory", "ThemesConfig", "ThemesModel", "TiccSettings",
    "Trajectory", "TrainingError", "adjusted_rand_index", "aligned_macro_f1",
    "classification_metrics", "derived_configs", "evaluate_model", "fit",
    "format_mean_std", "generate", "load_dataset", "predict_actions",
    "run_ablation", "save_dataset", "segmentation_metrics", "split_dataset",
]
