"""AdamW with decoupled weight decay, plus the half-cosine learning schedule.

The optimizer is driven externally: the training loop computes the learning
rate for the current step and passes it to ``step`` together with the
gradient dict, so the schedule never hides inside optimizer state.
"""

from __future__ import annotations

import math

import torch

from .functional import Tensor


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Learning rate at ``step``: cosine decay from ``lr_max`` to ``lr_min``
    across the first half of ``total_steps``, constant ``lr_min`` afterwards.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if lr_min < 0.0 or lr_max < lr_min:
        raise ValueError(f"need lr_max >= lr_min >= 0, got {lr_max} and {lr_min}")
    half = total_steps / 2.0
    if step >= half:
        return lr_min
    if step == 0:
        return lr_max
    progress = step / half
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay over an ordered set of named tensors.

    Decay multiplies each parameter by ``1 - lr * weight_decay`` before the
    Adam update, so a zero-gradient step still shrinks the parameter. The
    step counter increments before bias correction. State round-trips
    exactly through ``state_dict``/``load_state_dict``.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        items = list(params.items())
        if not items:
            raise ValueError("no parameters to optimize")
        beta1, beta2 = betas
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        if lr < 0.0 or eps <= 0.0 or weight_decay < 0.0:
            raise ValueError("lr and weight_decay must be >= 0 and eps > 0")
        self.names = [name for name, _ in items]
        self.params = dict(items)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = {name: torch.zeros_like(p) for name, p in items}
        self.exp_avg_sq = {name: torch.zeros_like(p) for name, p in items}

    def step(self, grads: dict[str, Tensor], lr: float | None = None) -> None:
        """Apply one update in place. ``grads`` must cover every parameter."""
        lr = self.lr if lr is None else lr
        missing = [name for name in self.names if name not in grads]
        if missing:
            raise KeyError(f"missing gradients for {missing}")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        with torch.no_grad():
            for name in self.names:
                param = self.params[name]
                grad = grads[name]
                if grad.shape != param.shape:
                    raise ValueError(
                        f"gradient shape {tuple(grad.shape)} does not match "
                        f"parameter {name!r} shape {tuple(param.shape)}"
                    )
                m = self.exp_avg[name]
                v = self.exp_avg_sq[name]
                m.mul_(self.beta1).add_(grad, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(grad, grad, value=1.0 - self.beta2)
                denom = (v / bias2).sqrt_().add_(self.eps)
                param.mul_(1.0 - lr * self.weight_decay)
                param.addcdiv_(m / bias1, denom, value=-lr)

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "exp_avg": {name: m.clone() for name, m in self.exp_avg.items()},
            "exp_avg_sq": {name: v.clone() for name, v in self.exp_avg_sq.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        for key in ("exp_avg", "exp_avg_sq"):
            if set(state[key]) != set(self.names):
                raise ValueError(f"{key} names do not match the registered parameters")
        self.step_count = int(state["step_count"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.weight_decay = float(state["weight_decay"])
        with torch.no_grad():
            for name in self.names:
                self.exp_avg[name].copy_(state["exp_avg"][name])
                self.exp_avg_sq[name].copy_(state["exp_avg_sq"][name])
