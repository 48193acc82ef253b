"""Neural building blocks: activations, dense layers, a gated recurrent cell and MSE."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, elementwise, make

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


class Parameter(Tensor):
    """Trainable tensor plus its Adam moment accumulators."""

    __slots__ = ("name", "decay", "m", "v")

    def __init__(self, value, name: str = "", decay: bool = True):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.decay = decay  # subject to L2 regularization
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def selu(x: Tensor) -> Tensor:
    def f(v):
        return SELU_SCALE * np.where(v > 0, v, SELU_ALPHA * np.expm1(np.minimum(v, 0.0)))

    def df(v, y):
        return np.where(v > 0, SELU_SCALE, y + SELU_SCALE * SELU_ALPHA)

    return elementwise(x, f, df, "selu")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    return elementwise(x, _sigmoid, lambda v, y: y * (1.0 - y), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return elementwise(x, np.tanh, lambda v, y: 1.0 - y * y, "tanh")


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` as one op."""
    if x.value.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense: input {x.shape}, weight {w.shape}, bias {b.shape}")
    return make(x.value @ w.value + b.value, (x, w, b),
                lambda g: (g @ w.value.T, x.value.T @ g, g.sum(axis=0)), "dense")


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.value - target
    n = diff.size
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        value = np.asarray(np.mean(diff * diff))
    return make(value, (pred,), lambda g: (float(g) * 2.0 / n * diff,), "mse")


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        self.w = Parameter(uniform_init(rng, n_in, (n_in, n_out)), f"{name}.w")
        self.b = Parameter(uniform_init(rng, n_in, (n_out,)), f"{name}.b", decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.w, self.b)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def gru_cell(h: Tensor, x: Tensor, wx: Tensor, wh: Tensor, bx: Tensor, bh: Tensor) -> Tensor:
    """One gated recurrent update for a batch of rows.

    With ``gx = x wx + bx`` and ``gh = h wh + bh`` split into (update, reset,
    candidate) blocks::

        z = sigmoid(gx_z + gh_z)
        r = sigmoid(gx_r + gh_r)
        n = tanh(gx_n + r * gh_n)
        h' = z * h + (1 - z) * n
    """
    hs = h.shape[-1]
    if (h.value.ndim != 2 or x.value.ndim != 2 or h.shape[0] != x.shape[0]
            or wx.shape != (x.shape[1], 3 * hs) or wh.shape != (hs, 3 * hs)):
        raise ShapeError(f"gru_cell: state {h.shape}, input {x.shape}, wx {wx.shape}, wh {wh.shape}")
    gx = x.value @ wx.value + bx.value
    gh = h.value @ wh.value + bh.value
    z = _sigmoid(gx[:, :hs] + gh[:, :hs])
    r = _sigmoid(gx[:, hs:2 * hs] + gh[:, hs:2 * hs])
    ghn = gh[:, 2 * hs:]
    n = np.tanh(gx[:, 2 * hs:] + r * ghn)
    out = z * h.value + (1.0 - z) * n

    def backward(g):
        dz = g * (h.value - n)
        dan = g * (1.0 - z) * (1.0 - n * n)
        daz = dz * z * (1.0 - z)
        dar = dan * ghn * r * (1.0 - r)
        dgx = np.concatenate([daz, dar, dan], axis=1)
        dgh = np.concatenate([daz, dar, dan * r], axis=1)
        dh = g * z + dgh @ wh.value.T
        dx = dgx @ wx.value.T
        return dh, dx, x.value.T @ dgx, h.value.T @ dgh, dgx.sum(axis=0), dgh.sum(axis=0)

    return make(out, (h, x, wx, wh, bx, bh), backward, "gru_cell")


class GRUCell:
    def __init__(self, state_size: int, input_size: int, rng: np.random.Generator, name: str = "gru"):
        self.state_size = state_size
        self.input_size = input_size
        h = state_size
        self.wx = Parameter(uniform_init(rng, input_size, (input_size, 3 * h)), f"{name}.wx")
        self.wh = Parameter(uniform_init(rng, h, (h, 3 * h)), f"{name}.wh")
        self.bx = Parameter(uniform_init(rng, h, (3 * h,)), f"{name}.bx", decay=False)
        self.bh = Parameter(uniform_init(rng, h, (3 * h,)), f"{name}.bh", decay=False)

    def __call__(self, state: Tensor, inputs: Tensor) -> Tensor:
        return gru_cell(state, inputs, self.wx, self.wh, self.bx, self.bh)

    def parameters(self) -> list[Parameter]:
        return [self.wx, self.wh, self.bx, self.bh]


def rnn_step(cell: GRUCell, state: Tensor, inputs: Tensor) -> Tensor:
    if state.shape[-1] != cell.state_size or inputs.shape[-1] != cell.input_size:
        raise ShapeError(f"rnn_step: cell expects state {cell.state_size} / input {cell.input_size}, "
                         f"got {state.shape} / {inputs.shape}")
    return cell(state, inputs)
