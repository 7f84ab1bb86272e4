"""Time-distance vision transformers for irregularly sampled image sequences.

A small numpy-based stack: a tape autodiff engine, continuous-time token
encodings, temporal-emphasis attention scaling, masked-autoencoder
pretraining, and a synthetic longitudinal nodule benchmark where sampling
irregularity carries the label signal.
"""

from .attention import HeadWeights, MhaLayer, TemParams, attention_head_standard, \
    attention_head_time_aware, multi_head, tem_scale
from .datasynth import GeneratorSpec, NoduleDataset, SyntheticSample, generate_dataset, \
    generate_v1, generate_v2, load_dataset, load_external_backgrounds, render_nodule, \
    sample_growth, save_dataset
from .embedding import ImageSequence, TokenSequence, add_time_encodings, embed_patches, \
    patchify, positional_encoding_2d, rel_time_matrix, rel_time_vector, time_encoding, \
    time_shift_matrix, unpatchify
from .evaluate import ScoredSet, evaluate, roc_auc, roc_curve
from .gradcheck import finite_difference_check
from .model import MaskPlan, ModelConfig, ModelParams, bce_with_logits, forward_classify, \
    forward_mae, forward_logits, init_weights, sample_mask
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, matmul, no_grad, relu, sigmoid, softmax_rows
from .training import AdamW, ScheduleConfig, TrainConfig, augment, lr_at, pretrain_mae, \
    train_classifier

__version__ = "0.1.0"
