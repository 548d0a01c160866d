"""Predictor training, localizer training by disrupted-risk ascent, and the
tau grid search that picks the smallest budget reaching a target R^2."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.optim import OptimizerState, optimizer_step
from .autodiff.tensor import NonFiniteError, Tensor, no_grad
from .data import Dataset, kfold_indices
from .localizer import CaeConfig, Localizer, build_cae
from .metrics import R2Report, bootstrap_r2_ci, generalized_partial_r2
from .predictor import Predictor, loss_tensor

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


class FrozenPredictorError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "learning_rate": 1e-3})
    max_epochs: int = 50
    batch_size: int = 64
    validation_fraction: float = 0.2
    early_stop_patience: int = 10
    lr_reduce_factor: float = 0.382
    lr_reduce_patience: int | None = 3
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.early_stop_patience < 1 or (self.lr_reduce_patience is not None and self.lr_reduce_patience < 1):
            raise ValueError("patience must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in (0, 1)")
        if not 0 < self.lr_reduce_factor < 1:
            raise ValueError("lr reduce factor must lie in (0, 1)")
        OptimizerState(**self.optimizer)  # validates the spec early

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(**self.optimizer)


def predictor_config(**overrides) -> TrainConfig:
    """Adam at 1e-3 with early stopping on validation accuracy, patience 10,
    no learning-rate schedule."""
    return replace(TrainConfig(lr_reduce_patience=None), **overrides)


def localizer_config(tau: float, **overrides) -> TrainConfig:
    """SGD at 10/tau, lr x0.382 on validation plateau, early stopping patience 15."""
    base = TrainConfig(optimizer={"kind": "sgd", "learning_rate": 10.0 / tau},
                       early_stop_patience=15, max_epochs=100)
    return replace(base, **overrides)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    best_epoch: int = 0
    wall_seconds: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


def _train_val_split(data: Dataset, fraction: float, seed: int):
    perm = np.random.default_rng(seed).permutation(len(data))
    n_val = max(1, int(round(fraction * len(data))))
    return data.subset(np.sort(perm[:-n_val])), data.subset(np.sort(perm[-n_val:]))


class _Plateau:
    """Tracks a maximised metric for early stopping and lr reduction."""

    def __init__(self, stop_patience: int, reduce_patience: int):
        self.best = -np.inf
        self.since_best = 0
        self.since_reduce = 0
        self.stop_patience = stop_patience
        self.reduce_patience = reduce_patience

    def update(self, value: float) -> tuple[bool, bool, bool]:
        """Returns (improved, reduce_lr, stop)."""
        if value > self.best:
            self.best = value
            self.since_best = 0
            self.since_reduce = 0
            return True, False, False
        self.since_best += 1
        self.since_reduce += 1
        reduce = self.reduce_patience is not None and self.since_reduce >= self.reduce_patience
        if reduce:
            self.since_reduce = 0
        return False, reduce, self.since_best >= self.stop_patience


def _fit(params, batch_loss: Callable[[np.ndarray], Tensor], n_train: int,
         validate: Callable[[], float], cfg: TrainConfig, what: str) -> TrainHistory:
    """Generic minibatch loop: minimises ``batch_loss``, maximises ``validate``,
    restores the best-validated parameters."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 1])
    state = cfg.make_optimizer()
    plateau = _Plateau(cfg.early_stop_patience, cfg.lr_reduce_patience)
    history = TrainHistory()
    best_state = params.state()
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n_train)
        total = 0.0
        try:
            for s in range(0, n_train, cfg.batch_size):
                idx = np.sort(perm[s:s + cfg.batch_size])
                params.zero_grad()
                loss = batch_loss(idx)
                loss.backward()
                optimizer_step(state, params, params.grads())
                total += loss.item() * len(idx)
            score = validate()
        except NonFiniteError as e:
            raise DivergenceError(f"{what} diverged in epoch {epoch}: {e}") from e
        if not np.isfinite(score):
            raise DivergenceError(f"{what} diverged in epoch {epoch}: validation metric {score}")
        history.train_loss.append(total / n_train)
        history.val_metric.append(float(score))
        history.learning_rates.append(state.learning_rate)
        improved, reduce, stop = plateau.update(score)
        if improved:
            best_state = params.state()
            history.best_epoch = epoch
        if reduce:
            state.learning_rate *= cfg.lr_reduce_factor
        if stop:
            break
    params.load_state(best_state)
    history.wall_seconds = time.perf_counter() - t0
    return history


def train_predictor(spec: Sequence[dict], data: Dataset, cfg: TrainConfig | None = None,
                    l1_weight: float = 0.0, loss_kind: str = "cross-entropy") -> Predictor:
    """Fit the model to be explained, then freeze it.

    Classification monitors validation accuracy; regression monitors negative
    validation loss. An L1 penalty ``l1_weight * sum|theta|`` covers every
    parameter.
    """
    cfg = cfg or predictor_config()
    if l1_weight < 0:
        raise ValueError("l1 weight must be nonnegative")
    if loss_kind == "cross-entropy" and len(np.unique(data.labels)) < 2:
        raise ValueError("classification needs at least two classes")
    train, val = _train_val_split(data, cfg.validation_fraction, cfg.seed)
    d = Predictor(spec, data.instance_shape, loss_kind, seed=cfg.seed)
    params = list(d.params.values())
    x, y = train.features, train.labels

    def batch_loss(idx):
        loss = loss_tensor(d(x[idx]), y[idx], loss_kind)
        if l1_weight:
            loss = ops.add(loss, ops.l1_penalty(params, l1_weight))
        return loss

    def validate():
        if loss_kind == "cross-entropy":
            return d.accuracy(val.features, val.labels)
        return -float(np.mean(d.losses(val.features, val.labels)))

    d.history = _fit(d.params, batch_loss, len(train), validate, cfg, "predictor training")
    return d.freeze()


def train_localizer(d: Predictor, loc, train: Dataset, cfg: TrainConfig | None = None):
    """Maximise the mean disrupted loss over the localizer parameters."""
    if not d.frozen:
        raise FrozenPredictorError("predictor must be frozen before localizer training")
    cfg = cfg or localizer_config(loc.tau)
    before = d.params.digest()
    tr, val = _train_val_split(train, cfg.validation_fraction, cfg.seed)
    x, y = tr.features, tr.labels

    def batch_loss(idx):
        return ops.mul(loss_tensor(d(loc.disrupted_tensor(x[idx])), y[idx], d.loss_kind), -1.0)

    def validate():
        _, _, dis = loc.localize(val.features)
        return float(np.mean(d.losses(dis, val.labels)))

    loc.history = _fit(loc.params, batch_loss, len(tr), validate, cfg, "localizer training")
    if d.params.digest() != before:
        raise FrozenPredictorError("predictor parameters changed during localizer training")
    return loc


# tau selection

@dataclass
class SweepCell:
    tau: float
    r2: float
    report: R2Report | None = None
    epochs_run: int = 0
    wall_seconds: float = 0.0
    error: str | None = None
    localizer: object = field(default=None, repr=False, compare=False)


@dataclass
class TauSweepResult:
    grid: list
    cells: list
    selected_tau: float | None
    target_r2: float

    @property
    def reports(self) -> dict:
        return {c.tau: c.report for c in self.cells}

    @property
    def reached(self) -> bool:
        return self.selected_tau is not None

    def to_json(self) -> dict:
        # timings are deliberately excluded so identical seeds give identical bytes
        return {
            "grid": list(self.grid),
            "target_r2": self.target_r2,
            "selected_tau": self.selected_tau,
            "reports": [
                {"tau": c.tau, "r2": c.r2, "epochs_run": c.epochs_run, "error": c.error,
                 "report": c.report.to_json() if c.report else None}
                for c in self.cells
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "r2", "j_empirical", "ci_lower", "ci_upper", "epochs_run", "wall_seconds"])
        for c in self.cells:
            r = c.report
            w.writerow([c.tau, c.r2, r.empirical_j if r else "", r.ci_lower if r else "",
                        r.ci_upper if r else "", c.epochs_run, f"{c.wall_seconds:.3f}"])
        return buf.getvalue()


def select_tau(taus: Sequence[float], r2s: Sequence[float], target: float) -> float | None:
    """Smallest tau whose R^2 reaches ``target``; None when none does."""
    for tau, r2 in sorted(zip(taus, r2s)):
        if r2 >= target:
            return tau
    return None


@dataclass
class LocalizerFactory:
    """Picklable ``tau -> fresh Localizer``; every tau starts from the same seed."""
    config: CaeConfig
    seed: int = 0

    def __call__(self, tau: float) -> Localizer:
        return build_cae(self.config, self.seed, tau)


def _run_cell(d, make_loc, train, test, tau, cfg, B, level, seed):
    t0 = time.perf_counter()
    loc = make_loc(tau)
    c = cfg(tau) if callable(cfg) else cfg
    train_localizer(d, loc, train, c)
    report = bootstrap_r2_ci(d, loc, test, B=B, level=level, seed=seed)
    return SweepCell(tau, report.point_estimate, report, loc.history.epochs_run,
                     time.perf_counter() - t0, localizer=loc)


def sweep_tau(d, make_loc, train: Dataset | None, test: Dataset | None, grid: Sequence[float],
              target_r2: float, cfg=None, full_sweep: bool = False, B: int = 500,
              level: float = 0.95, seed: int = 0, evaluator: Callable | None = None,
              jobs: int = 1) -> TauSweepResult:
    """Train one localizer per tau in ascending order and stop at the first
    whose test R^2 reaches ``target_r2`` (or run every cell with ``full_sweep``).

    ``cfg`` is a TrainConfig or a ``tau -> TrainConfig`` callable (default
    ``localizer_config``). ``evaluator`` replaces training and evaluation with
    a ``tau -> R2Report | float`` callable.
    """
    grid = [float(t) for t in grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"grid must be non-empty and strictly increasing: {grid}")
    if not 0 < target_r2 < 1:
        raise ValueError("target r2 must lie in (0, 1)")
    if train is not None:
        p = train.n_features
        if grid[0] <= 0 or grid[-1] > p:
            raise ValueError(f"grid values must lie in (0, {p}]")
    cfg = cfg if cfg is not None else localizer_config

    def run(tau):
        if evaluator is not None:
            out = evaluator(tau)
            if isinstance(out, R2Report):
                return SweepCell(tau, out.point_estimate, out)
            return SweepCell(tau, float(out))
        return _run_cell(d, make_loc, train, test, tau, cfg, B, level, seed)

    cells: list[SweepCell] = []
    if jobs > 1 and evaluator is None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for start in range(0, len(grid), jobs):
                wave = grid[start:start + jobs]
                futures = [pool.submit(_run_cell, d, make_loc, train, test, t, cfg, B, level, seed)
                           for t in wave]
                cells.extend(f.result() for f in futures)
                if not full_sweep and any(c.r2 >= target_r2 for c in cells):
                    break
    else:
        for tau in grid:
            cell = run(tau)
            log.info("tau=%g r2=%.4f", tau, cell.r2)
            cells.append(cell)
            if not full_sweep and cell.r2 >= target_r2:
                break
    if not full_sweep:
        # parallel waves may overshoot; keep exactly what a serial run records
        for i, c in enumerate(cells):
            if c.r2 >= target_r2:
                cells = cells[: i + 1]
                break
    selected = select_tau([c.tau for c in cells], [c.r2 for c in cells], target_r2)
    return TauSweepResult(grid, cells, selected, float(target_r2))


# architecture robustness

@dataclass
class ArchitectureRow:
    name: str
    mean_r2: float
    std_r2: float
    fold_r2: list
    errors: list

    def to_json(self) -> dict:
        return asdict(self)


def _arch_cell(d, config, tau, train, test, cfg, seed):
    loc = build_cae(config, seed, tau)
    c = cfg(tau) if callable(cfg) else cfg
    train_localizer(d, loc, train, c)
    return generalized_partial_r2(d, loc, test)


def architecture_sweep(d, configs: Sequence[CaeConfig], tau: float, data: Dataset, cfg=None,
                       k: int = 10, seed: int = 0, jobs: int = 1) -> list[ArchitectureRow]:
    """k-fold cross-validated R^2 of a localizer per architecture at fixed tau.

    Failures are recorded per fold instead of aborting the sweep.
    """
    if not configs:
        raise ValueError("need at least one architecture")
    cfg = cfg if cfg is not None else localizer_config
    folds = kfold_indices(len(data), k, seed)
    jobs_list = []
    for config in configs:
        for f, test_idx in enumerate(folds):
            train_idx = np.sort(np.concatenate([folds[g] for g in range(k) if g != f]))
            jobs_list.append((config, data.subset(train_idx), data.subset(test_idx)))

    def collect(results):
        rows = []
        for i, config in enumerate(configs):
            vals, errs = [], []
            for f in range(k):
                r = results[i * k + f]
                if isinstance(r, Exception):
                    errs.append(f"fold {f}: {type(r).__name__}: {r}")
                else:
                    vals.append(float(r))
            arr = np.array(vals)
            rows.append(ArchitectureRow(config.name, float(arr.mean()) if vals else float("nan"),
                                        float(arr.std()) if vals else float("nan"), vals, errs))
        return rows

    results: list = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_arch_cell, d, c, tau, tr, te, cfg, seed) for c, tr, te in jobs_list]
            for fut in futures:
                try:
                    results.append(fut.result())
                except Exception as e:  # recorded per cell
                    results.append(e)
    else:
        for c, tr, te in jobs_list:
            try:
                results.append(_arch_cell(d, c, tau, tr, te, cfg, seed))
            except Exception as e:  # recorded per cell
                results.append(e)
    return collect(results)
