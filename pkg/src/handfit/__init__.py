"""handfit: fit a skinned parametric hand model to sparse 3D keypoint sequences
and derive a unified joint set from the fitted mesh."""

__version__ = "0.1.0"

from .energy import EnergyBreakdown, EnergyWeights, KeypointFrame, e_key, e_reg, e_smooth, total_energy
from .fitter import FineConfig, FitConfig, FitReport, coarse_fit, fine_fit, fit_frame, fit_sequence
from .metrics import EvalReport, evaluate
from .model import (
    HandModel,
    HandPoseState,
    Mesh,
    ModelValidationError,
    Skeleton,
    forward,
    regress_rest_joints,
    synth_model,
    validate_model,
)
from .container import ContainerError, load_model, load_regressor, save_model, save_regressor
from .optim import AdamState, GradientEvaluator, OptimizationError, OptimizerConfig, adam_init, adam_step, minimize
from .unified import (
    AlignmentMap,
    FusedSkeletonSpec,
    MlpRegressor,
    TrainConfig,
    align_models,
    build_training_set,
    fuse_skeletons,
    predict_joints,
    train_mlp,
)

__all__ = [name for name in dir() if not name.startswith("_")]
