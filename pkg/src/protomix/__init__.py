"""Few-shot hyperspectral patch classification.

A prototype-network classifier whose feature extractor is a stack of
self-attention encoders over the patch's pixel sequence. Training mixes
pairs of query patches inside random rectangles to imitate hard
class-boundary samples, and weights the two labels either by area or by the
attention mass each source contributes. Inference embeds patches and
classifies them by nearest neighbors against an augmented labeled pool.
"""

from .data import (
    HsiCube,
    LabelMap,
    PatchSample,
    SplitSpec,
    augment_target,
    detect_boundary,
    extract_all_patches,
    extract_patch,
    split_few_shot,
    synth_dataset,
)
from .container import load_cube, save_cube
from .episodes import Episode, EpisodeConfig, sample_episode
from .estimator import ProtoMixClassifier
from .evaluation import EvalResult, Metrics, compute_metrics, evaluate, knn_predict, render_map
from .fewshot import Prototypes, class_log_probs, compute_prototypes, mixed_episode_loss
from .mixing import MixMask, MixedQuery, apply_mix, cutmix_lambdas, mix_query_set, sample_mask, transmix_lambdas
from .model import ModelParams, TransformerConfig, extract_features_and_attention
from .training import TrainConfig, TrainState, init_params, run_schedule, train_step

__all__ = [
    "HsiCube",
    "LabelMap",
    "PatchSample",
    "SplitSpec",
    "augment_target",
    "detect_boundary",
    "extract_all_patches",
    "extract_patch",
    "split_few_shot",
    "synth_dataset",
    "load_cube",
    "save_cube",
    "Episode",
    "EpisodeConfig",
    "sample_episode",
    "ProtoMixClassifier",
    "EvalResult",
    "Metrics",
    "compute_metrics",
    "evaluate",
    "knn_predict",
    "render_map",
    "Prototypes",
    "class_log_probs",
    "compute_prototypes",
    "mixed_episode_loss",
    "MixMask",
    "MixedQuery",
    "apply_mix",
    "cutmix_lambdas",
    "mix_query_set",
    "sample_mask",
    "transmix_lambdas",
    "ModelParams",
    "TransformerConfig",
    "extract_features_and_attention",
    "TrainConfig",
    "TrainState",
    "init_params",
    "run_schedule",
    "train_step",
]

__version__ = "0.1.0"
