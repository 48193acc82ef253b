from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward

# Coordinates whose analytic and numeric gradients are both below this are
# compared in absolute terms (relative error of two near-zeros is noise).
GRAD_FLOOR = 1e-7


def grad_check(model_fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    ``model_fn`` must rebuild the scalar output from the current parameter
    values each call.  With ``max_coords`` only a random subset of
    coordinates per parameter is probed.
    """
    for p in params:
        p.grad = None
    out = model_fn()
    backward(out)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(model_fn().value)
            flat[i] = orig - epsilon
            down = float(model_fn().value)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = grad.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), GRAD_FLOOR))
    for p in params:
        p.grad = None
    return worst
