"""
Module base class and the parametrised layers the network is built from.

Parameters are created with an explicit `np.random.Generator` and dtype so
that model construction is reproducible from a seed and precision flag.
"""

from __future__ import annotations

import math

from typing import Iterator

import numpy as np

from app.engine import functional as F
from app.engine.autodiff import Parameter
from app.engine.tensor import DType, Tensor


def trunc_normal(shape: tuple[int, ...], rng: np.random.Generator, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within +-bound*std."""
    values = rng.standard_normal(shape)
    outside = np.abs(values) > bound
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > bound
    return values * std


def kaiming_normal(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Module:
    """
    Minimal module container.

    Parameters and sub-modules are discovered from instance attributes (also
    inside lists and dicts) in definition order, which gives stable dotted
    names such as `backbone.stages.0.1.hco.to_k.rgb.weight`.
    """

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = '') -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, param in self._walk(self, prefix):
            if id(param) not in seen:
                seen.add(id(param))
                yield name, param

    @classmethod
    def _walk(cls, obj, prefix: str) -> Iterator[tuple[str, Parameter]]:
        items = vars(obj).items() if isinstance(obj, Module) else obj.items() if isinstance(obj, dict) else enumerate(obj)
        for key, value in items:
            name = f'{prefix}.{key}' if prefix else str(key)
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, (Module, list, tuple, dict)):
                yield from cls._walk(value, name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def modules(self) -> Iterator[Module]:
        yield self
        pending = list(vars(self).values())
        while pending:
            value = pending.pop(0)
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                pending[:0] = list(value)
            elif isinstance(value, dict):
                pending[:0] = list(value.values())

    def train(self, mode: bool = True) -> Module:
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self, trainable_only: bool = True) -> int:
        return sum(p.size for p in self.parameters() if p.trainable or not trainable_only)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f'state_dict mismatch; missing={missing[:5]} unexpected={unexpected[:5]}')
        for name, param in own.items():
            param.assign(state[name])


class Linear(Module):
    """y = x @ W + b over the last dimension; W is stored [in, out]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype: DType = DType.F32, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(trunc_normal((in_features, out_features), rng), dtype=dtype)
        self.bias = Parameter(np.zeros(out_features), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int, dtype: DType = DType.F32, eps: float = 1e-5):
        self.eps = eps
        self.weight = Parameter(np.ones(channels), dtype=dtype)
        self.bias = Parameter(np.zeros(channels), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.weight, self.bias, self.eps)


class ChannelLayerNorm(LayerNorm):
    """LayerNorm over C for [B, C, H, W] input."""

    def forward(self, x: Tensor) -> Tensor:
        y = F.layernorm(F.transpose(x, (0, 2, 3, 1)), self.weight, self.bias, self.eps)
        return F.transpose(y, (0, 3, 1, 2))


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype: DType = DType.F32, eps: float = 1e-5, momentum: float = 0.1):
        self.eps = eps
        self.momentum = momentum
        self.weight = Parameter(np.ones(channels), dtype=dtype)
        self.bias = Parameter(np.zeros(channels), dtype=dtype)
        self.running_mean = Parameter(np.zeros(channels), dtype=dtype, trainable=False)
        self.running_var = Parameter(np.ones(channels), dtype=dtype, trainable=False)

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        dtype: DType = DType.F32,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        self.stride = stride
        self.padding = padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_normal(shape, in_channels * kernel_size**2, rng), dtype=dtype)
        self.bias = Parameter(np.zeros(out_channels), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    def __init__(
        self,
        channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        dtype: DType = DType.F32,
        stride: int = 1,
        bias: bool = True,
    ):
        self.stride = stride
        self.weight = Parameter(kaiming_normal((channels, kernel_size, kernel_size), kernel_size**2, rng), dtype=dtype)
        self.bias = Parameter(np.zeros(channels), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv2d(x, self.weight, self.stride, None, self.bias)
