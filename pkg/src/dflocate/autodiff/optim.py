"""SGD, SGD with momentum and decoupled weight decay (SGDW), and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import FrozenParameterError, ParameterSet

KINDS = ("sgd", "sgd-momentum-weight-decay", "adam")


class MissingGradientError(KeyError):
    pass


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    moments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "sgdw":
            self.kind = "sgd-momentum-weight-decay"
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; choose from {KINDS}")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
        }


def optimizer_step(state: OptimizerState, params: ParameterSet, grads: dict[str, np.ndarray]) -> ParameterSet:
    """Apply one update in place and return ``params``."""
    if params.frozen:
        raise FrozenParameterError("refusing to update a frozen parameter set")
    trainable = params.trainable()
    missing = [k for k in trainable if k not in grads or grads[k] is None]
    if missing:
        raise MissingGradientError(f"no gradient for trainable parameters {missing}")
    state.step_count += 1
    lr = state.learning_rate
    t = state.step_count
    for name, p in trainable.items():
        g = grads[name]
        if state.kind == "adam":
            m, v = state.moments.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
            m = state.beta1 * m + (1 - state.beta1) * g
            v = state.beta2 * v + (1 - state.beta2) * g * g
            state.moments[name] = (m, v)
            mhat = m / (1 - state.beta1**t)
            vhat = v / (1 - state.beta2**t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + state.eps)
            continue
        if state.momentum > 0:
            buf = state.moments.get(name)
            buf = g.copy() if buf is None else state.momentum * buf + g
            state.moments[name] = buf
            step = buf
        else:
            step = g
        new = p.data - lr * step
        if state.kind == "sgd-momentum-weight-decay" and state.weight_decay:
            new = new - lr * state.weight_decay * p.data
        p.data = new
    return params
