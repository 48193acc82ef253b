"""Small reverse-mode autodiff library on top of numpy (float64 throughout)."""
from .gradcheck import grad_check
from .nn import (Dense, GRUCell, Parameter, dense, gru_cell, mse, rnn_step, selu, sigmoid, tanh,
                 uniform_init)
from .optim import StepDecay, adam_step, l2_penalty
from .tensor import (NonFiniteError, ShapeError, Tensor, add, backward, concat, elementwise, gather,
                     index_update, matmul, mean, mul, scatter_add, square, sub, sum_rows, total)

__all__ = [
    "Tensor", "Parameter", "ShapeError", "NonFiniteError", "backward",
    "add", "sub", "mul", "matmul", "concat", "sum_rows", "total", "mean", "gather", "scatter_add",
    "index_update", "elementwise", "square", "selu", "sigmoid", "tanh", "dense", "gru_cell",
    "rnn_step", "mse", "Dense", "GRUCell", "uniform_init", "StepDecay", "adam_step", "l2_penalty",
    "grad_check",
]
