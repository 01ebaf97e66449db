"""Adaptive optimizer with decoupled weight decay, plus the lr schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor


@dataclass
class Schedule:
    """Linear warmup to base_lr, then cosine decay to min_lr.

    Counting is in optimizer steps: warmup spans warmup_epochs *
    steps_per_epoch steps, the cosine arc ends at total_epochs *
    steps_per_epoch. drop_epoch > 0 multiplies the rate by drop_factor
    from the start of that epoch onward (epochs counted from 1), the
    fine-tune preset's mid-run step-down.
    """

    base_lr: float
    min_lr: float
    warmup_epochs: int
    total_epochs: int
    steps_per_epoch: int
    drop_epoch: int = 0
    drop_factor: float = 0.1

    def __post_init__(self):
        if self.warmup_epochs >= self.total_epochs:
            raise ContractError(
                f"warmup ({self.warmup_epochs}) must be shorter than the run "
                f"({self.total_epochs} epochs)"
            )
        if self.min_lr > self.base_lr:
            raise ContractError(f"min_lr {self.min_lr} exceeds base_lr {self.base_lr}")
        if self.steps_per_epoch < 1:
            raise ContractError("steps_per_epoch must be positive")


def lr_at(step: int, sched: Schedule) -> float:
    """Learning rate for a 0-based step index."""
    if step < 0:
        raise ContractError(f"step must be nonnegative, got {step}")
    warm = sched.warmup_epochs * sched.steps_per_epoch
    total = sched.total_epochs * sched.steps_per_epoch
    if step < warm:
        lr = sched.base_lr * step / warm
    else:
        progress = (step - warm) / max(1, total - warm)
        progress = min(progress, 1.0)
        lr = sched.min_lr + (sched.base_lr - sched.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))
    if sched.drop_epoch > 0 and step >= (sched.drop_epoch - 1) * sched.steps_per_epoch:
        lr *= sched.drop_factor
    return lr


def layerwise_scale(depth_index: int, total_depths: int, factor: float) -> float:
    """Per-depth lr multiplier factor**(total - index).

    Index 0 is the patch embedding (largest exponent), total_depths is
    the head (exponent 0).
    """
    if not 0.0 < factor <= 1.0:
        raise ContractError(f"layer decay factor must be in (0, 1], got {factor}")
    if not 0 <= depth_index <= total_depths:
        raise ContractError(f"depth index {depth_index} outside 0..{total_depths}")
    return factor ** (total_depths - depth_index)


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    Parameters whose grad is None are skipped entirely for the step;
    lr_scales carries optional per-parameter multipliers (layer-wise
    decay). Updates are elementwise and bit-deterministic.
    """

    params: dict[str, Tensor]
    lr_scales: dict[str, float] | None = None
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.05
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))

    def step(self, lr: float) -> None:
        """One update over all parameters with populated gradients."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            plr = lr if self.lr_scales is None else lr * self.lr_scales.get(name, 1.0)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            # decay first (separate from the adaptive term), then the update
            p.data *= 1.0 - plr * self.weight_decay
            p.data -= plr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
