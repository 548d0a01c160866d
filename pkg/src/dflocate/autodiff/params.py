from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


class FrozenParameterError(RuntimeError):
    pass


class Parameter(Tensor):
    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable, op="parameter")
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool):
        self.requires_grad = bool(flag)


class ParameterSet:
    """Ordered name -> Parameter map.

    A frozen set refuses optimizer updates and stops tracking gradients.
    """

    def __init__(self, params: dict[str, Parameter] | None = None):
        self._params: OrderedDict[str, Parameter] = OrderedDict()
        self.frozen = False
        for name, p in (params or {}).items():
            self.add(name, p)

    def add(self, name: str, p: Parameter) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p.name = name
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def trainable(self) -> dict[str, Parameter]:
        return {k: p for k, p in self._params.items() if p.trainable}

    def freeze(self) -> "ParameterSet":
        self.frozen = True
        for p in self._params.values():
            p.trainable = False
            p.grad = None
        return self

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self._params.items() if p.trainable and p.grad is not None}

    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters {sorted(missing)}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k!r}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, p in self._params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
