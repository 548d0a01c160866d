"""Closed-form disruption for a linear model vs a trained constant localizer.

For y = x @ beta the worst disruption with ||delta||_1 <= tau spends the budget
on the largest |beta_j| first. A ConstantLocalizer trained by gradient ascent
on the squared error should land on the same vector (up to a global sign,
since (delta . beta)^2 does not care).

    python demos/linear_oracle.py
"""
import numpy as np

from dflocate import ConstantLocalizer, LinearPredictor, greedy_linear_delta
from dflocate.synthetic import linear_regression
from dflocate.training import localizer_config, train_localizer
from dflocate.metrics import generalized_partial_r2

beta = np.array([3.0, -1.0, 2.0, -0.5, 1.5])
data = linear_regression(n=2000, beta=beta, seed=0)
d = LinearPredictor(beta)

for tau in (0.5, 1.5, 2.5, 4.0):
    g = greedy_linear_delta(beta, tau)
    loc = ConstantLocalizer(len(beta), tau, seed=0)
    cfg = localizer_config(tau, optimizer={"kind": "adam", "learning_rate": 0.05}, batch_size=100)
    train_localizer(d, loc, data, cfg)
    learned = loc.delta()
    if learned @ g < 0:
        learned = -learned
    print(f"tau={tau:<4} greedy={np.round(g, 3)}  learned={np.round(learned, 3)}  "
          f"R2={generalized_partial_r2(d, loc, data):.3f}")
