"""Mixed-attention single-object tracker, trainable end-to-end on CPU.

The package couples feature extraction and template/search fusion in one
attention operation, adds corner-expectation localization heads, a
score-gated online template update rule, and masked pretraining on the
search region, all on top of a built-in reverse-mode tensor kernel.
"""

from .attention import (
    AttentionInputs,
    ConvMixBlock,
    SlimMixBlock,
    TokenBatch,
    attention_score_entries,
    attention_score_flops,
    mixed_attention,
)
from .backbone import (
    BackboneConfig,
    HierarchicalBackbone,
    PlainBackbone,
    StageSpec,
    export_attention_maps,
    hierarchical_base,
    hierarchical_tiny,
    plain_base,
    plain_tiny,
)
from .box import Box, iou
from .gradcheck import grad_check
from .heads import CornerMaps, PlainCornerHead, PyramidCornerHead, QueryHead, soft_argmax
from .losses import LossWeights, ciou_loss, combined_loc_loss, giou_loss, l1_box_loss
from .metrics import EvalReport, evaluate_tracker, success_auc
from .model import ModelConfig, TrackModel, build_model
from .optim import Adam, AdamW
from .pretrain import MaskedPretrainConfig, MaskedPretrainer, mask_search_tokens, patch_targets
from .score import ScorePredictor, roi_pool, score_loss
from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    UsageError,
    no_grad,
)
from .tracker import Tracker, TrackerConfig, crop_region, track_sequence

__version__ = "0.1.0"
