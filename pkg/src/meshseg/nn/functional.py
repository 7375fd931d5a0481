"""Stateless tensor operations shared by the feature branches and the
transformer stack.

Everything operates on torch tensors and keeps the dtype of its inputs;
models in this package run in double precision unless configured otherwise,
and nothing here casts implicitly.
"""

from __future__ import annotations

import math
from typing import Iterable

import torch

Tensor = torch.Tensor

# Probabilities are floored here before taking logs, so a confidently wrong
# prediction produces a large but finite loss.
LOG_FLOOR = 1e-12


def glorot_init(
    fan_in: int,
    fan_out: int,
    generator: torch.Generator | None = None,
    shape: tuple[int, ...] | None = None,
    dtype: torch.dtype = torch.float64,
) -> Tensor:
    """Sample weights uniformly from +-sqrt(6 / (fan_in + fan_out)).

    Parameters
    ----------
    fan_in, fan_out : int
        Fan counts that set the uniform bound; both must be positive.
    generator : torch.Generator, optional
        Source of randomness. Pass one to keep initialization reproducible.
    shape : tuple of int, optional
        Shape of the sampled tensor. Defaults to ``(fan_out, fan_in)``, the
        layout of a linear layer weight.
    """
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fan counts must be positive, got ({fan_in}, {fan_out})")
    if shape is None:
        shape = (fan_out, fan_in)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return (u * 2.0 - 1.0) * limit


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    """Shift-invariant softmax along ``dim``; output rows sum to one."""
    if x.numel() == 0 or x.shape[dim] == 0:
        raise ValueError("softmax over an empty dimension")
    shifted = x - x.amax(dim=dim, keepdim=True)
    weights = torch.exp(shifted)
    return weights / weights.sum(dim=dim, keepdim=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean and unit variance, then
    scale by ``gamma`` and shift by ``beta``.

    Uses the biased variance estimate, so ``layer_norm([1, 3], 1, 0, eps=0)``
    is exactly ``[-1, 1]``.
    """
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ValueError(
            f"gamma/beta must have shape ({width},), "
            f"got {tuple(gamma.shape)} and {tuple(beta.shape)}"
        )
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gamma + beta


def dropout(
    x: Tensor,
    rate: float,
    generator: torch.Generator | None = None,
    training: bool = True,
) -> Tensor:
    """Zero entries with probability ``rate``, scaling survivors by
    ``1 / (1 - rate)`` so the expectation is preserved.

    Identity when ``training`` is false or the rate is zero. A rate of one
    would zero everything, so rates must lie in [0, 1).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = torch.rand(x.shape, generator=generator, dtype=x.dtype) < keep
    return x * mask.to(x.dtype) / keep


def cross_entropy(
    probs: Tensor,
    labels: Tensor,
    label_mask: Tensor,
    floor: float = LOG_FLOOR,
) -> Tensor:
    """Mean negative log probability of the true class over mask-true rows.

    Parameters
    ----------
    probs : Tensor
        (N, C) class probabilities; every row must sum to one within 1e-6.
    labels : Tensor
        (N,) integer class indices. Rows where ``label_mask`` is false may
        hold any value (including the unlabeled sentinel).
    label_mask : Tensor
        (N,) boolean, true where a row carries supervision. At least one row
        must be true.
    """
    if probs.ndim != 2:
        raise ValueError(f"probs must be 2-D, got shape {tuple(probs.shape)}")
    n, num_classes = probs.shape
    if labels.shape != (n,) or label_mask.shape != (n,):
        raise ValueError("labels and label_mask must match the rows of probs")
    row_sums = probs.detach().sum(dim=1)
    if not torch.allclose(row_sums, torch.ones_like(row_sums), atol=1e-6):
        raise ValueError("probs rows must sum to one")
    if not bool(label_mask.any()):
        raise ValueError("cross entropy needs at least one labeled row")
    rows = label_mask.nonzero(as_tuple=True)[0]
    picked = labels[rows]
    if int(picked.min()) < 0 or int(picked.max()) >= num_classes:
        raise ValueError("labels of masked rows must lie in [0, num_classes)")
    p = probs[rows, picked]
    return -torch.clamp(p, min=floor).log().mean()


def gradients(
    loss: Tensor,
    params: dict[str, Tensor] | Iterable[tuple[str, Tensor]],
) -> dict[str, Tensor]:
    """Analytic gradients of a scalar loss for every named parameter.

    Parameters the loss does not depend on get zero gradients. Raises if the
    loss or any gradient is non-finite, naming the offending parameter.
    """
    if loss.numel() != 1:
        raise ValueError("loss must be a scalar")
    if not bool(torch.isfinite(loss)):
        raise RuntimeError("loss is not finite")
    items = list(params.items()) if isinstance(params, dict) else list(params)
    if not items:
        raise ValueError("no parameters given")
    grads = torch.autograd.grad(
        loss, [tensor for _, tensor in items], allow_unused=True
    )
    out: dict[str, Tensor] = {}
    for (name, tensor), grad in zip(items, grads):
        if grad is None:
            grad = torch.zeros_like(tensor)
        elif not bool(torch.isfinite(grad).all()):
            raise RuntimeError(f"non-finite gradient for parameter {name!r}")
        out[name] = grad
    return out
