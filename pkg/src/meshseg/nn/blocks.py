"""Transformer building blocks with explicit padding masks.

Masks are boolean with True marking real positions. Masked keys receive a
large negative additive bias before the attention softmax, so they never
contribute to any valid position's output. What a masked position itself
computes is unspecified; callers that care reset those rows afterwards.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from . import functional as F
from .functional import Tensor

MASK_BIAS = -1e9


def init_linear_(linear: nn.Linear, generator: torch.Generator | None = None) -> nn.Linear:
    """Reinitialize a linear layer in place: Glorot-uniform weight, zero bias."""
    fan_out, fan_in = linear.weight.shape
    with torch.no_grad():
        linear.weight.copy_(
            F.glorot_init(fan_in, fan_out, generator, dtype=linear.weight.dtype)
        )
        if linear.bias is not None:
            linear.bias.zero_()
    return linear


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    # (..., seq, width) -> (..., heads, seq, width // heads)
    *lead, seq, width = x.shape
    x = x.reshape(*lead, seq, num_heads, width // num_heads)
    return x.transpose(-3, -2)


def merge_heads(x: Tensor) -> Tensor:
    # (..., heads, seq, head_dim) -> (..., seq, heads * head_dim)
    x = x.transpose(-3, -2)
    *lead, seq, heads, head_dim = x.shape
    return x.reshape(*lead, seq, heads * head_dim)


class LayerNorm(nn.Module):
    def __init__(self, width: int, eps: float = 1e-5, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(width, dtype=dtype))
        self.beta = nn.Parameter(torch.zeros(width, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class MaskedSelfAttention(nn.Module):
    """Multi-head self-attention over ``(..., seq, width)`` token tensors.

    Args:
        width: token width; must divide evenly by ``num_heads``.
        num_heads: number of attention heads.
    """

    def __init__(self, width: int, num_heads: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        if width % num_heads != 0:
            raise ValueError(f"width {width} is not divisible by {num_heads} heads")
        self.width = width
        self.num_heads = num_heads
        self.head_dim = width // num_heads
        self.query = nn.Linear(width, width, dtype=dtype)
        self.key = nn.Linear(width, width, dtype=dtype)
        self.value = nn.Linear(width, width, dtype=dtype)
        self.out = nn.Linear(width, width, dtype=dtype)

    def forward(self, tokens: Tensor, mask: Tensor | None = None) -> Tensor:
        """Attend among tokens, excluding mask-false positions as keys.

        Args:
            tokens: (..., seq, width) token tensor.
            mask: optional (..., seq) boolean tensor, True at valid positions.
                Every sequence must keep at least one valid key.
        """
        if tokens.shape[-1] != self.width:
            raise ValueError(
                f"token width {tokens.shape[-1]} does not match module width {self.width}"
            )
        if mask is not None:
            if mask.shape != tokens.shape[:-1]:
                raise ValueError(
                    f"mask shape {tuple(mask.shape)} does not match tokens "
                    f"{tuple(tokens.shape[:-1])}"
                )
            if not bool(mask.any(dim=-1).all()):
                raise ValueError("attention mask leaves a sequence with no valid key")
        q = split_heads(self.query(tokens), self.num_heads)
        k = split_heads(self.key(tokens), self.num_heads)
        v = split_heads(self.value(tokens), self.num_heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            bias = (~mask).to(tokens.dtype) * MASK_BIAS
            # keys live on the last score axis; broadcast over heads and queries
            scores = scores + bias.unsqueeze(-2).unsqueeze(-2)
        weights = F.softmax(scores, dim=-1)
        return self.out(merge_heads(weights @ v))


class CrossAttention(nn.Module):
    """Multi-head attention whose queries and key/value context differ."""

    def __init__(self, width: int, num_heads: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        if width % num_heads != 0:
            raise ValueError(f"width {width} is not divisible by {num_heads} heads")
        self.width = width
        self.num_heads = num_heads
        self.head_dim = width // num_heads
        self.query = nn.Linear(width, width, dtype=dtype)
        self.key = nn.Linear(width, width, dtype=dtype)
        self.value = nn.Linear(width, width, dtype=dtype)
        self.out = nn.Linear(width, width, dtype=dtype)

    def forward(self, queries: Tensor, context: Tensor) -> Tensor:
        """queries: (..., Q, width); context: (..., S, width)."""
        q = split_heads(self.query(queries), self.num_heads)
        k = split_heads(self.key(context), self.num_heads)
        v = split_heads(self.value(context), self.num_heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = F.softmax(scores, dim=-1)
        return self.out(merge_heads(weights @ v))


class TwoLayerMLP(nn.Module):
    """Linear -> ReLU -> dropout -> Linear."""

    def __init__(
        self,
        in_width: int,
        hidden_width: int,
        out_width: int,
        dropout_rate: float = 0.0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.lin1 = nn.Linear(in_width, hidden_width, dtype=dtype)
        self.lin2 = nn.Linear(hidden_width, out_width, dtype=dtype)
        self.dropout_rate = dropout_rate

    def forward(self, x: Tensor, generator: torch.Generator | None = None) -> Tensor:
        hidden = torch.relu(self.lin1(x))
        hidden = F.dropout(hidden, self.dropout_rate, generator, self.training)
        return self.lin2(hidden)


class TransformerBlock(nn.Module):
    """Post-norm block: attention, residual, norm, MLP, residual, norm."""

    def __init__(
        self,
        width: int,
        num_heads: int,
        mlp_hidden: int,
        dropout_rate: float = 0.0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.attn = MaskedSelfAttention(width, num_heads, dtype=dtype)
        self.norm1 = LayerNorm(width, dtype=dtype)
        self.mlp = TwoLayerMLP(width, mlp_hidden, width, dropout_rate, dtype=dtype)
        self.norm2 = LayerNorm(width, dtype=dtype)

    def forward(
        self,
        tokens: Tensor,
        mask: Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> Tensor:
        x = self.norm1(tokens + self.attn(tokens, mask))
        return self.norm2(x + self.mlp(x, generator))
