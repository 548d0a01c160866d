"""Closed-form greedy disruptions for linear and piecewise-linear regression,
with an independent discretised maximiser to check them against.

For a linear model the disrupted squared risk grows with ``(delta @ beta)**2``,
and over ``||delta||_1 <= tau, ||delta||_inf <= 1`` that is maximised by
spending the budget on the largest ``|beta_j|`` first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class TieError(ValueError):
    def __init__(self, indices: Sequence[int], region: int | None = None):
        self.indices = sorted(int(i) for i in indices)
        self.region = region
        where = f" in region {region}" if region is not None else ""
        super().__init__(f"|beta| ties at the budget boundary{where}: indices {self.indices}")


def _validate(beta, tau):
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.size == 0 or not np.all(np.isfinite(beta)):
        raise ValueError("beta must be a non-empty finite vector")
    if not 0 < tau <= beta.size:
        raise ValueError(f"tau must lie in (0, {beta.size}], got {tau}")
    return beta


def _boundary_ties(mag: np.ndarray, k: int, frac: float) -> list[int]:
    """Indices whose shared magnitude straddles rank k-1/k (or k/k+1 when a
    fractional unit is handed out); zero magnitudes never matter."""
    order = np.argsort(-mag, kind="stable")
    s = mag[order]
    p = mag.size
    pairs = []
    if 1 <= k < p:
        pairs.append((k - 1, k))
    if frac > 0 and k + 1 < p:
        pairs.append((k, k + 1))
    tied: set[int] = set()
    for a, b in pairs:
        if s[a] == s[b] and s[a] > 0:
            tied.update(np.flatnonzero(mag == s[a]).tolist())
    return sorted(tied)


def greedy_linear_delta(beta, tau: float) -> np.ndarray:
    """delta_j = sign(beta_j) for the floor(tau) largest |beta_j|,
    (tau - floor(tau)) * sign(beta_j) for the next one, 0 otherwise."""
    beta = _validate(beta, tau)
    mag = np.abs(beta)
    k = math.floor(tau)
    frac = tau - k
    ties = _boundary_ties(mag, k, frac)
    if ties:
        raise TieError(ties)
    # rank_j = #{i : |beta_i| > |beta_j|}
    rank = (mag[None, :] > mag[:, None]).sum(axis=1)
    delta = np.where(rank < k, 1.0, np.where(rank == k, frac, 0.0)) * np.sign(beta)
    return delta + 0.0  # normalise -0.0


@dataclass
class PiecewiseLinearModel:
    regions: list[Callable[[np.ndarray], bool]]
    betas: list[np.ndarray]

    def __post_init__(self):
        if len(self.regions) != len(self.betas) or not self.regions:
            raise ValueError("need one coefficient vector per region")
        self.betas = [np.asarray(b, dtype=np.float64) for b in self.betas]
        if len({b.size for b in self.betas}) != 1:
            raise ValueError("all regions need coefficient vectors of the same length")

    def region_of(self, x) -> int:
        hits = [v for v, member in enumerate(self.regions) if member(x)]
        if len(hits) != 1:
            raise ValueError(f"input falls in {len(hits)} regions; the cover must be disjoint")
        return hits[0]

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.array([xi @ self.betas[self.region_of(xi)] for xi in x])


def greedy_piecewise_delta(model: PiecewiseLinearModel, tau: float) -> list[np.ndarray]:
    out = []
    for v, beta in enumerate(model.betas):
        try:
            out.append(greedy_linear_delta(beta, tau))
        except TieError as e:
            raise TieError(e.indices, region=v) from None
    return out


def piecewise_localizer(model: PiecewiseLinearModel, tau: float) -> Callable[[np.ndarray], np.ndarray]:
    deltas = greedy_piecewise_delta(model, tau)
    return lambda x: deltas[model.region_of(x)]


def brute_force_linear_delta(beta, tau: float, grid_step: float = 0.01) -> np.ndarray:
    """Exact maximiser of sum_j |delta_j beta_j| over the grid
    {-1, -1 + s, ..., 1}^p intersected with ||delta||_1 <= tau.

    The objective and constraints depend on delta_j only through |delta_j|,
    so magnitudes are searched by dynamic programming over budget units and
    signs follow beta. Ties keep the smaller magnitude (zero for beta_j = 0).
    """
    beta = _validate(beta, tau)
    p = beta.size
    if p > 6:
        raise ValueError(f"brute force is limited to p <= 6, got {p}")
    if not 0 < grid_step <= 0.05:
        raise ValueError("grid step must lie in (0, 0.05]")
    levels = int(round(1.0 / grid_step))
    if abs(levels * grid_step - 1.0) > 1e-9:
        raise ValueError("grid step must divide 1")
    cap = int(math.floor(tau / grid_step + 1e-9))
    mag = np.abs(beta)
    # best[j][c]: max objective using items j.. with c units left
    best = np.zeros((p + 1, cap + 1))
    choice = np.zeros((p, cap + 1), dtype=np.int64)
    for j in range(p - 1, -1, -1):
        for c in range(cap + 1):
            top, arg = best[j + 1][c], 0
            for u in range(1, min(levels, c) + 1):
                val = mag[j] * u * grid_step + best[j + 1][c - u]
                if val > top + 1e-12:
                    top, arg = val, u
            best[j][c], choice[j][c] = top, arg
    delta = np.zeros(p)
    c = cap
    for j in range(p):
        u = choice[j][c]
        delta[j] = u * grid_step * (1.0 if beta[j] >= 0 else -1.0) if beta[j] != 0 else 0.0
        c -= u
    return delta


def enumerate_linear_delta(beta, tau: float, grid_step: float = 0.05) -> np.ndarray:
    """Literal enumeration of the signed grid maximising ``(delta @ beta)**2``;
    only for tiny p. The result is sign-aligned with ``beta`` (delta and
    -delta score the same)."""
    beta = _validate(beta, tau)
    p = beta.size
    vals = np.round(np.arange(-1.0, 1.0 + grid_step / 2, grid_step), 12)
    mesh = np.stack(np.meshgrid(*([vals] * p), indexing="ij"), axis=-1).reshape(-1, p)
    feasible = mesh[np.abs(mesh).sum(axis=1) <= tau + 1e-9]
    obj = (feasible @ beta) ** 2
    best = feasible[np.argmax(obj)]
    return best if best @ beta >= 0 else -best


def linear_objective(delta, beta) -> float:
    """Increase in mean squared error caused by a constant disruption."""
    return float(np.dot(np.asarray(delta, dtype=np.float64), np.asarray(beta, dtype=np.float64)) ** 2)
