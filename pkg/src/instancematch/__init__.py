"""Few-shot instance recognition from serialized backbone features.

Pipeline: pool masked patch embeddings into instance embeddings, optionally
refine them with a trained adapter, score query proposals against template
embeddings by cosine similarity, assign instance ids by stable matching or
argmax, and evaluate with COCO-style average precision.
"""

from .adapter import (
    ClipAdapterConfig,
    MlpParams,
    WeightAdapterConfig,
    clip_adapter_forward,
    mlp_forward,
    refine_embeddings,
    weight_adapter_forward,
    weighted_cosine,
)
from .embeddings import (
    PatchGrid,
    TemplateSet,
    build_template_set,
    cosine_similarity,
    ffa_pool,
)
from .evaluation import ApResult, GroundTruth, GroundTruthSet, compute_ap, iou_box, iou_mask
from .matching import (
    LabeledProposal,
    MatcherConfig,
    ScoreTensor,
    aggregate,
    appearance_score,
    apply_bonus,
    assign_argmax,
    assign_stable,
    score_templates,
    threshold_filter,
)
from .synth import SynthConfig, gen_synth
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    backprop_adapter,
    grad_check,
    infonce_loss,
    train_adapter,
)

__all__ = [
    "AdamState",
    "ApResult",
    "ClipAdapterConfig",
    "GroundTruth",
    "GroundTruthSet",
    "LabeledProposal",
    "MatcherConfig",
    "MlpParams",
    "PatchGrid",
    "ScoreTensor",
    "SynthConfig",
    "TemplateSet",
    "TrainConfig",
    "WeightAdapterConfig",
    "adam_step",
    "aggregate",
    "appearance_score",
    "apply_bonus",
    "assign_argmax",
    "assign_stable",
    "backprop_adapter",
    "build_template_set",
    "clip_adapter_forward",
    "compute_ap",
    "cosine_similarity",
    "ffa_pool",
    "gen_synth",
    "grad_check",
    "infonce_loss",
    "iou_box",
    "iou_mask",
    "mlp_forward",
    "refine_embeddings",
    "score_templates",
    "threshold_filter",
    "train_adapter",
    "weight_adapter_forward",
    "weighted_cosine",
]

__version__ = "0.1.0"
