from .tensor import (
    Tensor,
    Parameter,
    no_grad,
    add,
    sub,
    mul,
    div,
    matmul,
    concatenate,
    reshape,
    swapaxes,
    gelu,
    softmax,
    dropout,
    conv1d,
    layer_norm,
    batch_norm,
    dmsa,
    attention_weights,
)
from .layers import Module, Linear, Conv1d, BatchNorm1d, LayerNorm, Dropout
from .optim import Adam, ReduceLROnPlateau
from .gradcheck import grad_check
from .rng import set_seed, get_rng
from .serialize import save_arrays, load_arrays

__all__ = [
    "Tensor", "Parameter", "no_grad",
    "add", "sub", "mul", "div", "matmul", "concatenate", "reshape", "swapaxes",
    "gelu", "softmax", "dropout", "conv1d", "layer_norm", "batch_norm",
    "dmsa", "attention_weights",
    "Module", "Linear", "Conv1d", "BatchNorm1d", "LayerNorm", "Dropout",
    "Adam", "ReduceLROnPlateau", "grad_check",
    "set_seed", "get_rng",
    "save_arrays", "load_arrays",
]
