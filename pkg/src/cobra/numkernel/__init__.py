"""
Cobra numeric kernel - dense float64 tensors with reverse-mode autodiff.
"""

from .layers import LayerNorm, Linear, Module, param
from .ops import (
    add,
    concat_frames,
    count_attention_madds,
    cross_entropy,
    depthwise_conv1d,
    dropout,
    embedding,
    gelu,
    glu,
    layer_norm,
    log_softmax_rows,
    matmul,
    mean_all,
    mean_of,
    mul,
    scale,
    scaled_dot_attention,
    slice_frames,
    softmax_rows,
    split_frames,
    sub,
    sum_all,
    swish,
)
from .optim import AdamW, CosineSchedule, clip_grad_norm
from .tensor import ComputeTape, Tensor, active_tape, as_tensor, backward, record_op
