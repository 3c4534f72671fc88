"""gridsynth: grid-based synthetic data augmentation with deterministic
replay, vision-text alignment and loss kernels, text-aware query
selection with encoder supplements, and AP / fixed-budget AP detection
evaluation.
"""

from .core import (
    Box2D,
    ImageBuffer,
    Instance,
    SampleAnnotation,
    affine_remap_box,
    box_union,
    clip_box,
    giou,
    iou,
)
from .detmetrics import (
    CategoryInfo,
    Detection,
    EvalConfig,
    EvalDataset,
    EvalReport,
    average_precision,
    evaluate,
    match_greedy,
    supplement_gain_scenario,
)
from .pool import (
    ObjectPatch,
    ObjectPool,
    build_pool,
    expand_box,
    load_pool,
    sample_patches,
    save_pool,
)
from .synth import (
    AppliedAugs,
    AugmentationPolicy,
    GridSpec,
    SynthConfig,
    copy_paste,
    css_blend,
    grid_synthesize,
    mixup,
    mosaic,
    pipeline_apply,
    pipeline_step,
    preprocess_patch,
    synthesize_sample,
)
from .vlalign import (
    AlignmentHeadParams,
    EmbeddingMatrix,
    LossWeights,
    QueryBudget,
    composite_loss,
    mal_loss,
    similarity_logits,
    similarity_prob,
    supplement_predictions,
    text_aware_select,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentHeadParams",
    "AppliedAugs",
    "AugmentationPolicy",
    "Box2D",
    "CategoryInfo",
    "Detection",
    "EmbeddingMatrix",
    "EvalConfig",
    "EvalDataset",
    "EvalReport",
    "GridSpec",
    "ImageBuffer",
    "Instance",
    "LossWeights",
    "ObjectPatch",
    "ObjectPool",
    "QueryBudget",
    "SampleAnnotation",
    "SynthConfig",
    "affine_remap_box",
    "average_precision",
    "box_union",
    "build_pool",
    "clip_box",
    "composite_loss",
    "copy_paste",
    "css_blend",
    "evaluate",
    "expand_box",
    "giou",
    "grid_synthesize",
    "iou",
    "load_pool",
    "mal_loss",
    "match_greedy",
    "mixup",
    "mosaic",
    "pipeline_apply",
    "pipeline_step",
    "preprocess_patch",
    "sample_patches",
    "save_pool",
    "similarity_logits",
    "similarity_prob",
    "supplement_gain_scenario",
    "supplement_predictions",
    "synthesize_sample",
    "text_aware_select",
]
