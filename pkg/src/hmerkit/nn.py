"""Parameter containers and the small layers the model is assembled from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape).astype(T.default_dtype())
    return Tensor(data, requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=T.default_dtype()), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=T.default_dtype()), requires_grad=True)


class Module:
    """Holds parameters and child modules as attributes, torch style."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        if missing:
            raise KeyError(f"state is missing parameters: {missing[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True):
        self.weight = glorot(rng, (n_in, n_out), n_in, n_out)
        self.bias = zeros((n_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is None:
            return y
        lead = (1,) * (y.ndim - 1)
        return y + T.expand(T.reshape(self.bias, lead + self.bias.shape), y.shape)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 padding: int | None = None, bias: bool = True):
        k2 = kernel * kernel
        self.weight = glorot(rng, (c_out, c_in, kernel, kernel), c_in * k2, c_out * k2)
        self.bias = zeros((c_out,)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    """Normalization over one axis with a learned per-feature gain and shift."""

    def __init__(self, dim: int, axis: int = -1):
        self.gain = ones((dim,))
        self.shift = zeros((dim,))
        self.axis = axis

    def __call__(self, x: Tensor) -> Tensor:
        y = T.layer_norm(x, self.axis)
        view = [1] * x.ndim
        view[self.axis] = x.shape[self.axis]
        g = T.expand(T.reshape(self.gain, tuple(view)), x.shape)
        b = T.expand(T.reshape(self.shift, tuple(view)), x.shape)
        return y * g + b


class Embedding(Module):
    def __init__(self, rng, n: int, dim: int):
        self.table = glorot(rng, (n, dim), n, dim)

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.table, ids)


class GRUCell(Module):
    def __init__(self, rng, n_in: int, hidden: int):
        fan = n_in + hidden
        self.w_z = glorot(rng, (fan, hidden), fan, hidden)
        self.w_r = glorot(rng, (fan, hidden), fan, hidden)
        self.w_h = glorot(rng, (fan, hidden), fan, hidden)
        self.b_z = zeros((hidden,))
        self.b_r = zeros((hidden,))
        self.b_h = zeros((hidden,))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return T.gru_cell(x, h, self.w_z, self.w_r, self.w_h, self.b_z, self.b_r, self.b_h)
