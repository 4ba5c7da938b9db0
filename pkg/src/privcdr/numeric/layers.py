"""Dense layers on top of the tape ops."""

from __future__ import annotations

import zlib

import numpy as np

from .autodiff import Parameter, Tensor, matmul, relu


def param_rng(seed: int, name: str) -> np.random.Generator:
    """An RNG stream owned by one named parameter, independent of creation order."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Dense:
    def __init__(self, name: str, fan_in: int, fan_out: int, seed: int = 0, dtype=np.float32):
        self.name = name
        self.fan_in, self.fan_out = fan_in, fan_out
        self.weight = Parameter(glorot(param_rng(seed, f"{name}.weight"), fan_in, fan_out, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros((1, fan_out), dtype=dtype), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class MLP:
    """Dense layers with ReLU between them and a linear output."""

    def __init__(self, name: str, sizes: list[int], seed: int = 0, dtype=np.float32):
        if len(sizes) < 2:
            raise ValueError(f"an MLP needs input and output sizes, got {sizes}")
        self.name = name
        self.sizes = list(sizes)
        self.layers = [Dense(f"{name}.{k}", a, b, seed, dtype) for k, (a, b) in enumerate(zip(sizes, sizes[1:]))]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def __call__(self, x: Tensor) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = relu(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]
