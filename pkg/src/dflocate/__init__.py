"""Feature localization for fixed predictive models.

A trained localizer removes a budgeted fraction of each input; the
generalized partial R^2 of the predictor on the disrupted inputs measures
how much of its skill the removed features carry.
"""

from .data import Dataset, load_mnist79, split
from .localizer import CaeConfig, ConstantLocalizer, Localizer, build_cae, preset
from .metrics import R2Report, bootstrap_r2_ci, generalized_partial_r2
from .oracles import TieError, greedy_linear_delta, greedy_piecewise_delta
from .predictor import LinearPredictor, Predictor
from .training import (TrainConfig, localizer_config, predictor_config, sweep_tau,
                       train_localizer, train_predictor)

__version__ = "0.1.0"
