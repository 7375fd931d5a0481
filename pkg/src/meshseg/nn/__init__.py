"""Neural primitives: initializers, activations, attention blocks, optimizer."""

from .functional import (
    Tensor,
    cross_entropy,
    dropout,
    glorot_init,
    gradients,
    layer_norm,
    softmax,
)
from .blocks import (
    MASK_BIAS,
    CrossAttention,
    LayerNorm,
    MaskedSelfAttention,
    TransformerBlock,
    TwoLayerMLP,
    init_linear_,
)
from .optim import AdamW, cosine_lr

__all__ = [
    "Tensor",
    "glorot_init",
    "softmax",
    "layer_norm",
    "dropout",
    "cross_entropy",
    "gradients",
    "MASK_BIAS",
    "LayerNorm",
    "MaskedSelfAttention",
    "CrossAttention",
    "TwoLayerMLP",
    "TransformerBlock",
    "init_linear_",
    "AdamW",
    "cosine_lr",
]
