"""Adam with a step-decayed learning rate and L2 weight regularization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Parameter
from .tensor import NonFiniteError


@dataclass(frozen=True)
class StepDecay:
    """``initial * factor ** (step // interval)``."""

    initial: float = 1e-3
    factor: float = 0.6
    interval: int = 80_000

    def __post_init__(self):
        if self.initial < 0 or not 0 < self.factor <= 1 or self.interval < 1:
            raise ValueError(f"invalid schedule {self}")

    def __call__(self, step: int) -> float:
        return self.initial * self.factor ** (step // self.interval)


def l2_penalty(params: Sequence[Parameter], l2_lambda: float) -> float:
    return l2_lambda * sum(float(np.sum(p.value * p.value)) for p in params if p.decay)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], lr_schedule, l2_lambda: float,
              step: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Update ``params`` in place; ``step`` counts updates already applied (0 for the first).

    The L2 term ``l2_lambda * sum(w**2)`` over decayed parameters adds
    ``2 * l2_lambda * w`` to their gradient.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    lr = lr_schedule(step) if callable(lr_schedule) else float(lr_schedule)
    t = step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g in zip(params, grads):
        g = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.name} {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {p.name}")
        if p.decay and l2_lambda:
            g = g + 2.0 * l2_lambda * p.value
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        p.value = p.value - lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
