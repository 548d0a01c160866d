"""How the bootstrap interval for R2 tightens as the test set grows.

Uses a linear model and a fixed disruption so the per-instance losses are
cheap; only the resampling is being looked at.

    python demos/bootstrap_width.py
"""
import numpy as np

from dflocate import ConstantLocalizer, LinearPredictor
from dflocate.metrics import bootstrap_from_losses, per_instance_losses
from dflocate.synthetic import linear_regression

beta = np.array([3.0, -1.0, 2.0, -0.5, 1.5])
d = LinearPredictor(beta)
loc = ConstantLocalizer(5, 1.0, seed=0)
loc.params["logits"].data[:] = [5.0, 0, 0, 0, 0]  # put the whole budget on x_0
loc.params["signs"].data[:] = 3.0

for n in (50, 200, 800, 3200):
    widths = []
    for seed in range(20):
        data = linear_regression(n=n, beta=beta, noise=0.5, seed=seed)
        full, dis = per_instance_losses(d, loc, data)
        lo, hi, _ = bootstrap_from_losses(full, dis, B=500, seed=seed)
        widths.append(hi - lo)
    print(f"n={n:<5} median width {np.median(widths):.4f}")
