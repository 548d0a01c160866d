"""Budget-constrained disruption networks.

A localizer maps an input ``x`` (entries in [0, 1]) to a removal proportion
``pi(x)`` and a disruption ``delta(x) = x * pi(x)``. The structured output
activation guarantees ``0 <= pi <= 1`` and ``sum(pi) <= tau`` for every
parameter value, so the budget never has to be enforced by the optimizer.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .autodiff import checkpoint, ops
from .autodiff.params import Parameter, ParameterSet
from .autodiff.tensor import Tensor, as_tensor, no_grad
from .data import Dataset

ACTIVATIONS = ("trelu-softmax", "tanh-relu-softmax")
INPUT_SLACK = 1e-9


class LocalizerError(ValueError):
    pass


def structured_activation(z, tau: float, kind: str = "trelu-softmax") -> Tensor:
    """TReLU(tau * softmax(z)) or tanh(ReLU(tau * softmax(z))).

    The softmax runs jointly over all non-batch positions. A 1-D ``z`` is a
    single instance.
    """
    if not tau > 0:
        raise LocalizerError(f"tau must be positive, got {tau}")
    if kind not in ACTIVATIONS:
        raise LocalizerError(f"unknown activation {kind!r}; choose from {ACTIVATIONS}")
    z = as_tensor(z)
    single = z.ndim == 1
    flat = ops.reshape(z, (1, -1) if single else (z.shape[0], -1))
    u = ops.mul(ops.softmax(flat, axis=-1), float(tau))
    out = ops.trelu(u) if kind == "trelu-softmax" else ops.tanh(ops.relu(u))
    return ops.reshape(out, z.shape)


@dataclass
class CaeConfig:
    input_shape: tuple[int, ...]
    encoder: list[tuple[int, int]] = field(default_factory=list)
    hidden: list[int] = field(default_factory=lambda: [32])
    decoder: list[tuple[int, int]] = field(default_factory=list)
    activation: str = "trelu-softmax"
    weight_norm: bool = True
    name: str = "cae"

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.encoder = [tuple(int(v) for v in e) for e in self.encoder]
        self.decoder = [tuple(int(v) for v in d) for d in self.decoder]
        self.hidden = [int(h) for h in self.hidden]
        if len(self.input_shape) not in (1, 2) or min(self.input_shape) < 1:
            raise LocalizerError(f"input shape must be 1-D or 2-D, got {self.input_shape}")
        if self.activation not in ACTIVATIONS:
            raise LocalizerError(f"unknown activation {self.activation!r}")
        for f, k in self.encoder + self.decoder:
            if f < 1 or k < 1:
                raise LocalizerError("filter counts and sizes must be positive")
        if any(h < 1 for h in self.hidden):
            raise LocalizerError("hidden widths must be positive")

    @property
    def n_features(self) -> int:
        return math.prod(self.input_shape)

    def to_json(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["encoder"] = [list(e) for e in self.encoder]
        d["decoder"] = [list(e) for e in self.decoder]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CaeConfig":
        return cls(**d)

    def network_spec(self) -> list[dict]:
        nsp = len(self.input_shape)
        conv, tconv = f"conv{nsp}d", f"conv{nsp}d_transpose"
        spec: list[dict] = []
        for f, k in self.encoder:
            spec += [{"type": conv, "filters": f, "kernel": k, "weight_norm": self.weight_norm},
                     {"type": "relu"}]
        for h in self.hidden:
            spec += [{"type": "dense", "units": h}, {"type": "relu"}]
        if self.hidden and (self.encoder or self.decoder):
            c = self.encoder[-1][0] if self.encoder else 1
            spec += [{"type": "dense", "units": c * self.n_features}, {"type": "relu"},
                     {"type": "reshape", "shape": [c, *self.input_shape]}]
        elif self.decoder and not self.encoder:
            spec.append({"type": "reshape", "shape": [1, *self.input_shape]})
        for f, k in self.decoder:
            spec += [{"type": tconv, "filters": f, "kernel": k, "weight_norm": self.weight_norm},
                     {"type": "relu"}]
        if self.encoder or self.decoder:
            last_k = (self.decoder or self.encoder)[-1][1]
            spec += [{"type": tconv, "filters": 1, "kernel": last_k},
                     {"type": "reshape", "shape": list(self.input_shape)}]
        else:
            spec += [{"type": "dense", "units": self.n_features},
                     {"type": "reshape", "shape": list(self.input_shape)}]
        return spec


def preset(name: str, input_shape: Sequence[int], kernel: int | None = None,
           hidden: Sequence[int] = (32,), activation: str = "trelu-softmax") -> CaeConfig:
    """Named architectures: ``CAE<w>`` is conv(w)+conv(w/2)+tconv(w/2)+tconv(w)
    around a dense bottleneck; ``MLP<w>`` is Dense(w)+Dense(w/2)+Dense(w/4)+Dense(p)."""
    input_shape = tuple(input_shape)
    k = kernel or (5 if len(input_shape) == 1 else 3)
    if name.upper().startswith("CAE"):
        w = int(name[3:])
        return CaeConfig(input_shape, encoder=[(w, k), (w // 2, k)], hidden=list(hidden),
                         decoder=[(w // 2, k), (w, k)], activation=activation, name=name)
    if name.upper().startswith("MLP"):
        w = int(name[3:])
        return CaeConfig(input_shape, hidden=[w, w // 2, w // 4], activation=activation,
                         weight_norm=False, name=name)
    raise LocalizerError(f"unknown preset {name!r}")


class Localizer:
    def __init__(self, config: CaeConfig, tau: float, seed: int = 0):
        if not tau > 0:
            raise LocalizerError(f"tau must be positive, got {tau}")
        self.config = config
        self.tau = float(tau)
        self.seed = int(seed)
        self.network = nn.build_network(config.network_spec(), config.input_shape, seed)
        self.params = nn.parameter_set(self.network)

    def _check(self, x: np.ndarray):
        if x.shape[1:] != self.config.input_shape:
            raise LocalizerError(
                f"input shape {x.shape[1:]} does not match localizer shape {self.config.input_shape}")
        if x.size and (x.min() < -INPUT_SLACK or x.max() > 1 + INPUT_SLACK):
            raise LocalizerError("localizer inputs must lie in [0, 1]")

    def pi_tensor(self, x) -> Tensor:
        x = as_tensor(x)
        self._check(x.data)
        return structured_activation(self.network(x), self.tau, self.config.activation)

    def graph(self, x) -> tuple[Tensor, Tensor, Tensor]:
        """(pi, delta, disrupted) as graph nodes."""
        x = as_tensor(x)
        pi = self.pi_tensor(x)
        delta = ops.mul(x, pi)
        return pi, delta, ops.sub(x, delta)

    def disrupted_tensor(self, x) -> Tensor:
        return self.graph(x)[2]

    def localize(self, x, batch_size: int = 128):
        return localize(self, x, batch_size)


class ConstantLocalizer:
    """Input-independent disruption: delta = TReLU(tau * softmax(z)) * tanh(v).

    This is the localizer class of the linear-model analysis, where the
    disruption is a fixed signed vector with ||delta||_1 <= tau and
    ||delta||_inf <= 1.
    """

    def __init__(self, p: int, tau: float, seed: int = 0):
        if not tau > 0:
            raise LocalizerError(f"tau must be positive, got {tau}")
        rng = np.random.default_rng(seed)
        self.tau = float(tau)
        self.p = int(p)
        self.params = ParameterSet({
            "logits": Parameter(0.01 * rng.standard_normal(p)),
            "signs": Parameter(0.01 * rng.standard_normal(p)),
        })

    def delta_tensor(self) -> Tensor:
        mag = structured_activation(self.params["logits"], self.tau, "trelu-softmax")
        return ops.mul(mag, ops.tanh(self.params["signs"]))

    def delta(self) -> np.ndarray:
        with no_grad():
            return self.delta_tensor().data.copy()

    def disrupted_tensor(self, x) -> Tensor:
        x = as_tensor(x)
        return ops.sub(x, ops.reshape(self.delta_tensor(), (1, self.p)))

    def localize(self, x, batch_size: int = 256):
        x = np.asarray(x, dtype=np.float64)
        d = np.broadcast_to(self.delta(), x.shape)
        return np.abs(d), d.copy(), x - d


def localize(loc: Localizer, x, batch_size: int = 128):
    """Return numpy ``(pi, delta, disrupted)``; a single instance is accepted."""
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == loc.config.input_shape
    if single:
        x = x[None]
    loc._check(x)
    pis, outs = [], []
    with no_grad():
        for s in range(0, len(x), batch_size):
            pi, _, dis = loc.graph(x[s:s + batch_size])
            pis.append(pi.data)
            outs.append(dis.data)
    pi, dis = np.concatenate(pis), np.concatenate(outs)
    # 0 <= x * pi <= x makes x - dis exact, so dis + delta == x bitwise
    delta = x - dis
    if single:
        return pi[0], delta[0], dis[0]
    return pi, delta, dis


def empirical_activity_norm(loc, data: Dataset | np.ndarray) -> float:
    """max_i ||delta(x_i)||_1 over the sample."""
    x = data.features if isinstance(data, Dataset) else np.asarray(data)
    if len(x) == 0:
        raise LocalizerError("empty dataset")
    _, delta, _ = loc.localize(x)
    return float(np.max(np.abs(delta).reshape(len(x), -1).sum(axis=1)))


def build_cae(config: CaeConfig, seed: int, tau: float = 1.0) -> Localizer:
    loc = Localizer(config, tau, seed)
    with no_grad():
        out = loc.network(np.zeros((1,) + config.input_shape)).shape[1:]
    if out != config.input_shape:
        raise LocalizerError(f"network output {out} does not reconcile with input {config.input_shape}")
    return loc


def save_localizer(loc: Localizer, path) -> tuple[Path, Path]:
    """Write DFL1 parameters to ``path`` and a JSON sidecar next to it."""
    path = Path(path)
    checkpoint.save(path, loc.params.state())
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {"config": loc.config.to_json(), "tau": loc.tau, "activation": loc.config.activation,
            "seed": loc.seed}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def load_localizer(path) -> Localizer:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text())
    loc = Localizer(CaeConfig.from_json(meta["config"]), meta["tau"], meta["seed"])
    loc.params.load_state(checkpoint.load(path))
    return loc
