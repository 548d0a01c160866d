"""Layers built on the autodiff core and a JSON-describable network builder.

A network spec is a list of layer dicts, e.g.::

    [{"type": "conv2d", "filters": 8, "kernel": 3, "stride": 2},
     {"type": "relu"},
     {"type": "flatten"},
     {"type": "dense", "units": 2}]

Inputs are per-instance arrays without a channel axis (``(28, 28)`` images,
``(187,)`` sequences); a channel axis is inserted before the first conv.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .autodiff import ops
from .autodiff.params import Parameter, ParameterSet, glorot_uniform
from .autodiff.tensor import Tensor, as_tensor, no_grad


class Module:
    def parameters(self) -> dict[str, Parameter]:
        return {}

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x) -> Tensor:
        return self.forward(as_tensor(x))


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, weight_norm: bool = False):
        w = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        self.weight_norm = weight_norm
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out))
        if weight_norm:
            self.gain = Parameter(np.linalg.norm(w, axis=0))

    def parameters(self):
        p = {"weight": self.weight, "bias": self.bias}
        if self.weight_norm:
            p["gain"] = self.gain
        return p

    def forward(self, x):
        w = ops.weight_norm(self.weight, self.gain, out_axis=1) if self.weight_norm else self.weight
        return ops.add(ops.matmul(x, w), self.bias)


class _ConvBase(Module):
    transpose = False

    def __init__(self, nsp, c_in, c_out, kernel, rng, stride=1, padding="same", weight_norm=False):
        kernel = (kernel,) * nsp if isinstance(kernel, int) else tuple(kernel)
        rf = math.prod(kernel)
        shape = (c_in, c_out) + kernel if self.transpose else (c_out, c_in) + kernel
        self.out_axis = 1 if self.transpose else 0
        w = glorot_uniform(rng, shape, c_in * rf, c_out * rf)
        self.weight_norm = weight_norm
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out))
        if weight_norm:
            axes = tuple(i for i in range(w.ndim) if i != self.out_axis)
            self.gain = Parameter(np.sqrt(np.sum(w**2, axis=axes)))
        self.stride = stride
        self.padding = padding

    def parameters(self):
        p = {"weight": self.weight, "bias": self.bias}
        if self.weight_norm:
            p["gain"] = self.gain
        return p

    def kernel(self):
        if self.weight_norm:
            return ops.weight_norm(self.weight, self.gain, out_axis=self.out_axis)
        return self.weight


class Conv(_ConvBase):
    def forward(self, x):
        return ops.conv(x, self.kernel(), self.bias, self.stride, self.padding,
                        op="conv1d" if x.ndim == 3 else "conv2d")


class ConvTranspose(_ConvBase):
    transpose = True

    def forward(self, x):
        return ops.conv_transpose(x, self.kernel(), self.bias, self.stride, self.padding)


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)


class Tanh(Module):
    def forward(self, x):
        return ops.tanh(x)


class Reshape(Module):
    """Reshape the per-instance part, keeping the batch axis."""

    def __init__(self, shape: Sequence[int]):
        self.target = tuple(shape)

    def forward(self, x):
        return ops.reshape(x, (x.shape[0],) + self.target)


class Flatten(Module):
    def forward(self, x):
        return ops.reshape(x, (x.shape[0], -1))


class Sequential(Module):
    def __init__(self, layers: Sequence[Module], names: Sequence[str] | None = None):
        self.layers = list(layers)
        self.names = list(names) if names else [f"layer{i}" for i in range(len(self.layers))]

    def parameters(self):
        out = {}
        for name, layer in zip(self.names, self.layers):
            for k, p in layer.parameters().items():
                out[f"{name}.{k}"] = p
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def parameter_set(module: Module) -> ParameterSet:
    return ParameterSet(module.parameters())


def _out_shape(module: Module, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    with no_grad():
        return module(np.zeros((1,) + in_shape)).shape[1:]


CONV_TYPES = {"conv1d": 1, "conv2d": 2, "conv1d_transpose": 1, "conv2d_transpose": 2}


def build_network(spec: Sequence[dict], input_shape: Sequence[int], seed: int) -> Sequential:
    """Instantiate ``spec`` for per-instance ``input_shape``."""
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers: list[Module] = []
    names: list[str] = []
    for i, layer in enumerate(spec):
        kind = layer["type"]
        wn = bool(layer.get("weight_norm", False))
        if kind in CONV_TYPES:
            nsp = CONV_TYPES[kind]
            if len(shape) == nsp:
                layers.append(Reshape((1,) + shape))
                names.append(f"in{i}")
                shape = (1,) + shape
            if len(shape) != nsp + 1:
                raise ValueError(f"layer {i} ({kind}) cannot take input of shape {shape}")
            cls = ConvTranspose if kind.endswith("transpose") else Conv
            mod = cls(nsp, shape[0], int(layer["filters"]), layer.get("kernel", 3), rng,
                      stride=layer.get("stride", 1), padding=layer.get("padding", "same"),
                      weight_norm=wn)
        elif kind == "dense":
            if len(shape) != 1:
                layers.append(Flatten())
                names.append(f"flat{i}")
                shape = (math.prod(shape),)
            mod = Dense(shape[0], int(layer["units"]), rng, weight_norm=wn)
        elif kind == "relu":
            mod = ReLU()
        elif kind == "tanh":
            mod = Tanh()
        elif kind == "flatten":
            mod = Flatten()
        elif kind == "reshape":
            mod = Reshape(layer["shape"])
        else:
            raise ValueError(f"unknown layer type {kind!r}")
        layers.append(mod)
        names.append(f"layer{i}")
        shape = _out_shape(mod, shape)
    return Sequential(layers, names)
