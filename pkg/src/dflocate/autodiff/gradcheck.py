from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, graph_nodes, no_grad


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    kink_margin: float = np.inf
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


SCALE_FLOOR = 1e-6


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # scale-normalised so near-zero entries do not blow up the ratio; the
    # floor keeps gradients that are identically zero (e.g. a bias that shifts
    # every softmax logit) from comparing round-off against round-off
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if diff == 0.0:
        return 0.0
    return float(diff / max(scale, SCALE_FLOOR))


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backward gradients against central differences.

    ``loss_fn`` must rebuild the graph from the current values of ``params``
    on every call. The reported error for each parameter is
    ``max|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    margins = [n.kink_margin for n in graph_nodes(loss) if n.kink_margin is not None]
    loss.backward()
    report = GradCheckReport(tolerance=tolerance, kink_margin=min(margins, default=np.inf))
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * step)
        report.errors[name] = _rel_error(analytic, numeric)
    for p in params.values():
        p.grad = None
    return report
