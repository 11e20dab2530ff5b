"""Layer modules composing the autodiff primitives.

A Module owns Parameters and child Modules discovered by attribute walk
(insertion order, so parameter naming is deterministic). Weight init is a
fan-in-scaled uniform draw from the process RNG; norms start at identity.
"""

import math

import numpy as np

from ..errors import ConfigurationError
from . import tensor as T
from .rng import get_rng


class Module:
    def __init__(self):
        self.training = True
        self._buffer_names = []

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name, array):
        setattr(self, name, array)
        self._buffer_names.append(name)

    def _components(self):
        for name, value in vars(self).items():
            if isinstance(value, (T.Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (T.Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self._components():
            full = f"{prefix}{name}"
            if isinstance(value, T.Parameter):
                if value.name is None:
                    value.name = full
                yield full, value
            else:
                yield from value.named_parameters(prefix=f"{full}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffer_names:
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._components():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{name}.")

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        own = {name: p for name, p in self.named_parameters()}
        bufs = dict(self.named_buffers())
        for name, arr in state.items():
            if name in own:
                target = own[name].data
            elif name in bufs:
                target = bufs[name]
            else:
                raise ConfigurationError(f"unknown entry in state dict: {name}")
            if tuple(target.shape) != tuple(arr.shape):
                raise ConfigurationError(
                    f"shape mismatch for {name}: {target.shape} vs {arr.shape}"
                )
            target[...] = arr
        missing = (set(own) | set(bufs)) - set(state)
        if missing:
            raise ConfigurationError(f"state dict missing entries: {sorted(missing)}")

    def train(self, mode=True):
        self.training = mode
        for _, value in self._components():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            else:
                p.grad[...] = 0.0


def _uniform(shape, bound, dtype):
    return get_rng().uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features, out_features, dtype=np.float64):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = T.Parameter(_uniform((in_features, out_features), bound, dtype))
        self.bias = T.Parameter(_uniform((out_features,), bound, dtype))

    def forward(self, x):
        return T.matmul(x, self.weight) + self.bias


class Conv1d(Module):
    """Same-length convolution (stride 1, odd kernel, symmetric padding)."""

    def __init__(self, in_channels, out_channels, kernel_size, dilation=1,
                 dtype=np.float64):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ConfigurationError("kernel size must be odd")
        self.dilation = dilation
        bound = 1.0 / math.sqrt(in_channels * kernel_size)
        self.weight = T.Parameter(
            _uniform((out_channels, in_channels, kernel_size), bound, dtype)
        )
        self.bias = T.Parameter(_uniform((out_channels,), bound, dtype))

    def forward(self, x):
        return T.conv1d(x, self.weight, self.bias, dilation=self.dilation)


class BatchNorm1d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = T.Parameter(np.ones(channels, dtype=dtype))
        self.beta = T.Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x):
        return T.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.gamma = T.Parameter(np.ones(dim, dtype=dtype))
        self.beta = T.Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Dropout(Module):
    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x):
        return T.dropout(x, self.p, training=self.training)
