from .decomposer import (
    IntrinsicDecomposer,
    infer_albedo,
    infer_baseline,
    infer_chroma,
    infer_diffuse,
)
from .estimator import NumericalError, StageEstimator
from .features import LayerBuilder, build_stage_data, build_target
from .stages import ABLATION_TABLES, STAGES, StageSpec, ablation_variants, get_stage
from .training import TrainConfig, default_widths, train_baseline, train_stage

__all__ = [
    "ABLATION_TABLES", "IntrinsicDecomposer", "LayerBuilder", "NumericalError", "STAGES",
    "StageEstimator", "StageSpec", "TrainConfig", "ablation_variants", "build_stage_data",
    "build_target", "default_widths", "get_stage", "infer_albedo", "infer_baseline",
    "infer_chroma", "infer_diffuse", "train_baseline", "train_stage",
]
