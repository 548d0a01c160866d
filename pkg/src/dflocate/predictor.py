from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .autodiff import checkpoint, ops
from .autodiff.tensor import Tensor, as_tensor, no_grad

LOSS_KINDS = ("cross-entropy", "squared-error")


def loss_tensor(outputs: Tensor, labels, kind: str, reduction: str = "mean") -> Tensor:
    if kind == "cross-entropy":
        labels = np.asarray(labels)
        if labels.dtype.kind not in "iu":
            raise TypeError("cross-entropy needs integer class labels")
        return ops.cross_entropy(outputs, labels, reduction)
    if kind == "squared-error":
        return ops.squared_error(outputs, np.asarray(labels, dtype=np.float64), reduction)
    raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")


class Predictor:
    """The model being explained: a network spec plus its parameters.

    Once ``freeze()`` is called the parameters stop tracking gradients, so
    backpropagating a localizer objective only reaches the localizer.
    """

    def __init__(self, spec: Sequence[dict], input_shape: Sequence[int],
                 loss_kind: str = "cross-entropy", seed: int = 0):
        if loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        self.spec = [dict(layer) for layer in spec]
        self.input_shape = tuple(input_shape)
        self.loss_kind = loss_kind
        self.seed = int(seed)
        self.network = nn.build_network(self.spec, self.input_shape, self.seed)
        self.params = nn.parameter_set(self.network)

    @property
    def frozen(self) -> bool:
        return self.params.frozen

    def freeze(self) -> "Predictor":
        self.params.freeze()
        return self

    def __call__(self, x) -> Tensor:
        return self.network(as_tensor(x))

    def outputs(self, x, batch_size: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with no_grad():
            return np.concatenate([self.network(x[s:s + batch_size]).data
                                   for s in range(0, len(x), batch_size)])

    def losses(self, x, labels, batch_size: int = 512) -> np.ndarray:
        out = self.outputs(x, batch_size)
        with no_grad():
            return loss_tensor(Tensor(out), labels, self.loss_kind, reduction="none").data

    def predict(self, x) -> np.ndarray:
        out = self.outputs(x)
        if self.loss_kind == "cross-entropy":
            return out.argmax(axis=1)
        return out.reshape(len(out), -1)[:, 0]

    def accuracy(self, x, labels) -> float:
        return float(np.mean(self.predict(x) == np.asarray(labels)))

    def save(self, path) -> tuple[Path, Path]:
        path = Path(path)
        checkpoint.save(path, self.params.state())
        sidecar = path.with_suffix(path.suffix + ".json")
        meta = {"spec": self.spec, "input_shape": list(self.input_shape),
                "loss_kind": self.loss_kind, "seed": self.seed}
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path, sidecar

    @classmethod
    def load(cls, path) -> "Predictor":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        d = cls(meta["spec"], meta["input_shape"], meta["loss_kind"], meta["seed"])
        d.params.load_state(checkpoint.load(path))
        return d.freeze()


class LinearPredictor(Predictor):
    """A fixed linear model ``x @ beta + intercept`` with squared-error loss."""

    def __init__(self, beta, intercept: float = 0.0):
        beta = np.asarray(beta, dtype=np.float64)
        super().__init__([{"type": "dense", "units": 1}], (beta.size,), "squared-error")
        self.params["layer0.weight"].data = beta.reshape(-1, 1).copy()
        self.params["layer0.bias"].data = np.array([float(intercept)])
        self.freeze()
