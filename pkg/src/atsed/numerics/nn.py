"""Parameter containers and layers built on the functional ops."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A leaf tensor that an optimizer updates."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Minimal module tree: parameters, buffers and train/eval mode.

    Parameters, buffers (``numpy`` arrays registered with
    :meth:`register_buffer`) and child modules are discovered from instance
    attributes in assignment order, which fixes checkpoint ordering.
    """

    def __init__(self):
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def __getattr__(self, name):
        buffers = self.__dict__.get("_buffers")
        if buffers is not None and name in buffers:
            return buffers[name]
        raise AttributeError(f"{type(self).__name__} has no attribute {name!r}")

    def children(self) -> Iterator[tuple]:
        for key, value in self.__dict__.items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for key, value in self.__dict__.items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for key, value in self._buffers.items():
            yield prefix + key, value
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(params) + list(buffers) if k not in state]
        unexpected = [k for k in state if k not in params and k not in buffers]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, p in params.items():
            if k in state:
                value = np.asarray(state[k])
                if value.shape != p.shape:
                    raise ValueError(f"{k}: shape {value.shape} != {p.shape}")
                p.data = value.astype(p.data.dtype, copy=True)
        for k, b in buffers.items():
            if k in state:
                b[...] = state[k]

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Parameter(_uniform(rng, bound, (n_out, n_in)))
        self.bias = Parameter(_uniform(rng, bound, (n_out,))) if bias else None

    def forward(self, x):
        out = F.matmul(x, F.transpose(self.weight))
        return out + self.bias if self.bias is not None else out


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 padding: int = 1, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(c_in * kernel * kernel)
        self.weight = Parameter(_uniform(rng, bound, (c_out, c_in, kernel, kernel)))
        self.bias = Parameter(_uniform(rng, bound, (c_out,))) if bias else None
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, padding=(self.padding, self.padding))


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return F.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class GRUDirection(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(hidden)
        self.w_ih = Parameter(_uniform(rng, bound, (3 * hidden, n_in)))
        self.w_hh = Parameter(_uniform(rng, bound, (3 * hidden, hidden)))
        self.b_ih = Parameter(_uniform(rng, bound, (3 * hidden,)))
        self.b_hh = Parameter(_uniform(rng, bound, (3 * hidden,)))

    def params(self):
        return self.w_ih, self.w_hh, self.b_ih, self.b_hh


class BiGRU(Module):
    """Stacked bidirectional GRU; ``N x T x D`` -> ``N x T x 2H``."""

    def __init__(self, n_in: int, hidden: int, layers: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.fwd = []
        self.bwd = []
        for i in range(layers):
            d = n_in if i == 0 else 2 * hidden
            self.fwd.append(GRUDirection(d, hidden, rng))
            self.bwd.append(GRUDirection(d, hidden, rng))

    def forward(self, x):
        for f, b in zip(self.fwd, self.bwd):
            x = F.bigru(x, f.params(), b.params())
        return x


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x):
        return F.dropout(x, self.p, self.rng, self.training)
