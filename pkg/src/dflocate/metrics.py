"""Generalized partial R^2 and its bootstrap interval.

R^2(d, delta) = 1 - sum L(d(x), y) / sum L(d(x - delta(x)), y)

evaluated on a held-out sample. The bootstrap resamples cached per-instance
loss pairs, which are sufficient statistics for the ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .localizer import empirical_activity_norm

ZERO_DENOMINATOR = 1e-12
MAX_REDRAWS = 10


class DegenerateR2Error(ArithmeticError):
    pass


@dataclass
class R2Report:
    point_estimate: float
    tau: float
    empirical_j: float
    ci_lower: float
    ci_upper: float
    ci_level: float
    bootstrap_count: int

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def mean_loss(d, data: Dataset, kind: str | None = None) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    if kind is not None and kind != d.loss_kind:
        raise ValueError(f"predictor trained with {d.loss_kind}, asked for {kind}")
    return float(np.mean(d.losses(data.features, data.labels)))


def per_instance_losses(d, loc, data: Dataset, kind: str | None = None):
    """Aligned (full, disrupted) loss arrays."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if kind is not None and kind != d.loss_kind:
        raise ValueError(f"predictor trained with {d.loss_kind}, asked for {kind}")
    full = d.losses(data.features, data.labels)
    _, _, disrupted = loc.localize(data.features)
    return full, d.losses(disrupted, data.labels)


def r2_from_losses(full, disrupted) -> float:
    num = float(np.sum(full))
    den = float(np.sum(disrupted))
    if den <= ZERO_DENOMINATOR:
        raise DegenerateR2Error(f"disrupted loss sum {den} is zero; predictor/localizer pair is degenerate")
    return 1.0 - num / den


def generalized_partial_r2(d, loc, test: Dataset, kind: str | None = None) -> float:
    return r2_from_losses(*per_instance_losses(d, loc, test, kind))


def order_statistic_indices(B: int, level: float) -> tuple[int, int]:
    """1-based ranks floor((1-level)/2 * B) and floor((1+level)/2 * B), clamped to [1, B]."""
    eps = 1e-9  # guards products like 0.975 * 500 landing a hair below the integer
    lo = math.floor((1 - level) / 2 * B + eps)
    hi = math.floor((1 + level) / 2 * B + eps)
    return min(max(lo, 1), B), min(max(hi, 1), B)


def bootstrap_from_losses(full, disrupted, B: int = 500, level: float = 0.95, seed: int = 0):
    """Return (lower, upper, sorted replicate estimates).

    Replicate ``b`` draws from its own generator seeded by ``(seed, b)``, so
    any subset of replicates can be computed independently.
    """
    full = np.asarray(full, dtype=np.float64)
    disrupted = np.asarray(disrupted, dtype=np.float64)
    n = full.size
    if B < 100:
        raise ValueError("need at least 100 bootstrap replicates")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if n < 30:
        raise ValueError("need a test sample of at least 30 instances")
    estimates = np.empty(B)
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        for _ in range(MAX_REDRAWS):
            idx = rng.integers(0, n, size=n)
            den = disrupted[idx].sum()
            if den > ZERO_DENOMINATOR:
                estimates[b] = 1.0 - full[idx].sum() / den
                break
        else:
            raise DegenerateR2Error(f"bootstrap replicate {b} degenerate after {MAX_REDRAWS} redraws")
    estimates.sort()
    lo, hi = order_statistic_indices(B, level)
    return float(estimates[lo - 1]), float(estimates[hi - 1]), estimates


def bootstrap_r2_ci(d, loc, test: Dataset, B: int = 500, level: float = 0.95, seed: int = 0,
                    kind: str | None = None, losses=None) -> R2Report:
    full, disrupted = losses if losses is not None else per_instance_losses(d, loc, test, kind)
    lo, hi, _ = bootstrap_from_losses(full, disrupted, B, level, seed)
    return R2Report(
        point_estimate=r2_from_losses(full, disrupted),
        tau=float(loc.tau),
        empirical_j=empirical_activity_norm(loc, test),
        ci_lower=lo,
        ci_upper=hi,
        ci_level=float(level),
        bootstrap_count=int(B),
    )


def format_table(rows: list[tuple[str, R2Report]]) -> str:
    """Fixed-width summary with activity-norm and R^2 columns."""
    head = f"{'localizer':<14}{'tau':>8}{'J(.)':>10}{'R2':>9}{'CI lower':>10}{'CI upper':>10}"
    lines = [head, "-" * len(head)]
    for name, r in rows:
        lines.append(f"{name:<14}{r.tau:>8.3f}{r.empirical_j:>10.3f}{r.point_estimate:>9.3f}"
                     f"{r.ci_lower:>10.3f}{r.ci_upper:>10.3f}")
    return "\n".join(lines)
