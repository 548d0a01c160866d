"""Synthetic datasets for tests and demos. All features land in [0, 1]."""

from __future__ import annotations

import numpy as np

from .data import Dataset, fit_rescale


def two_class(n: int = 4000, p: int = 20, informative: int = 4, seed: int = 0,
              class_sep: float = 1.0, noise: float = 0.3) -> Dataset:
    """Two classes driven by ``informative`` latent Gaussian factors.

    Class 1 shifts every factor up by ``class_sep``. The first ``informative``
    columns are the factors themselves; the remaining ones are nonnegative
    mixtures of them plus independent noise. Evidence is therefore additive
    and same-signed across columns (like pixel intensity), so removing more
    mass keeps hurting the predictor instead of saturating after a few
    columns.
    """
    if not 1 <= informative <= p:
        raise ValueError(f"need 1 <= informative <= p, got {informative} and {p}")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    z = rng.standard_normal((n, informative)) + class_sep * y[:, None]
    mix = np.hstack([np.eye(informative), rng.uniform(0.0, 1.0, size=(informative, p - informative))])
    mix /= mix.sum(axis=0)
    x = z @ mix
    x[:, informative:] += noise * rng.standard_normal((n, p - informative))
    stats = fit_rescale(x)
    return Dataset(stats.apply(x), y.astype(np.int64), rescale=stats)


def linear_regression(n: int = 2000, beta=(3.0, -1.0, 2.0, -0.5, 1.5), noise: float = 0.1,
                      seed: int = 0) -> Dataset:
    """y = x @ beta + noise with x ~ U[0, 1]^p."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=np.float64)
    x = rng.uniform(0.0, 1.0, size=(n, beta.size))
    y = x @ beta + noise * rng.standard_normal(n)
    return Dataset(x, y)


def bump_sequences(n: int = 1000, length: int = 64, seed: int = 0, margin: int = 8) -> Dataset:
    """Class 0 carries one wide bump, class 1 two narrow bumps, at a random
    position per instance. Removing the middle of a wide bump or one of the
    twin peaks flips the apparent class, so the discriminative region moves
    with the motif."""
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    y = rng.integers(0, 2, size=n)
    centers = rng.integers(margin, length - margin, size=n)
    x = 0.1 + 0.03 * rng.standard_normal((n, length))
    for i in range(n):
        c = centers[i]
        if y[i] == 0:
            x[i] += 0.75 * np.exp(-0.5 * ((t - c) / 2.5) ** 2)
        else:
            x[i] += 0.75 * np.exp(-0.5 * ((t - c + 3) / 1.2) ** 2)
            x[i] += 0.75 * np.exp(-0.5 * ((t - c - 3) / 1.2) ** 2)
    return Dataset(np.clip(x, 0.0, 1.0), y.astype(np.int64))
