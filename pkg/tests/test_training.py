import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dflocate.data import Dataset
from dflocate.localizer import CaeConfig, ConstantLocalizer
from dflocate.metrics import R2Report
from dflocate.oracles import greedy_linear_delta
from dflocate.predictor import LinearPredictor, Predictor
from dflocate.synthetic import linear_regression, two_class
from dflocate.training import (
    DivergenceError,
    FrozenPredictorError,
    LocalizerFactory,
    TrainConfig,
    architecture_sweep,
    localizer_config,
    predictor_config,
    select_tau,
    sweep_tau,
    train_localizer,
    train_predictor,
)

GRID = [4, 6, 8, 10, 12, 14, 18, 20]


def lookup(table):
    calls = []

    def evaluator(tau):
        calls.append(tau)
        return table[tau]
    return evaluator, calls


class TestConfigs:
    def test_localizer_defaults(self):
        cfg = localizer_config(4.0)
        assert cfg.optimizer == {"kind": "sgd", "learning_rate": 2.5}
        assert cfg.early_stop_patience == 15 and cfg.lr_reduce_factor == 0.382

    def test_predictor_defaults(self):
        cfg = predictor_config()
        assert cfg.optimizer["kind"] == "adam" and cfg.early_stop_patience == 10
        assert cfg.lr_reduce_patience is None

    def test_invalid(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(optimizer={"kind": "rmsprop", "learning_rate": 0.1})


class TestSelection:
    def test_smallest_reaching(self):
        assert select_tau([4, 8, 12], [0.1, 0.6, 0.9], 0.5) == 8

    def test_unreachable(self):
        assert select_tau([4, 8], [0.1, 0.2], 0.5) is None

    def test_early_stop_on_first_success(self):
        table = dict(zip(GRID, [0.1, 0.2, 0.55, 0.6, 0.7, 0.8, 0.9, 0.95]))
        ev, calls = lookup(table)
        res = sweep_tau(None, None, None, None, GRID, 0.5, evaluator=ev)
        assert res.selected_tau == 8 and calls == [4, 6, 8]
        assert [c.tau for c in res.cells] == [4, 6, 8]

    def test_full_sweep_records_all(self):
        table = dict(zip(GRID, [0.1, 0.6, 0.4, 0.7, 0.7, 0.8, 0.9, 0.95]))
        ev, calls = lookup(table)
        res = sweep_tau(None, None, None, None, GRID, 0.5, full_sweep=True, evaluator=ev)
        assert calls == GRID and res.selected_tau == 6

    def test_no_tau_reaches(self):
        ev, _ = lookup({t: 0.1 for t in GRID})
        res = sweep_tau(None, None, None, None, GRID, 0.5, evaluator=ev)
        assert not res.reached and len(res.cells) == len(GRID)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1, 0.99), min_size=8, max_size=8), st.floats(0.05, 0.95))
    def test_minimality(self, r2s, target):
        ev, _ = lookup(dict(zip(GRID, r2s)))
        res = sweep_tau(None, None, None, None, GRID, target, evaluator=ev)
        ok = [t for t, r in zip(GRID, r2s) if r >= target]
        assert res.selected_tau == (min(ok) if ok else None)

    def test_grid_validation(self):
        ev, _ = lookup({})
        with pytest.raises(ValueError):
            sweep_tau(None, None, None, None, [4, 4], 0.5, evaluator=ev)
        with pytest.raises(ValueError):
            sweep_tau(None, None, None, None, [4], 1.0, evaluator=ev)
        data = Dataset(np.zeros((3, 5)), np.zeros(3))
        with pytest.raises(ValueError):
            sweep_tau(None, None, data, data, [4, 6], 0.5, evaluator=ev)

    def test_report_json_and_csv(self):
        rep = R2Report(0.6, 4.0, 3.9, 0.5, 0.7, 0.95, 500)
        res = sweep_tau(None, None, None, None, [4], 0.5, evaluator=lambda t: rep)
        js = json.loads(res.dumps())
        assert js["selected_tau"] == 4.0 and js["reports"][0]["report"]["ci_upper"] == 0.7
        header = res.to_csv().splitlines()[0]
        assert header == "tau,r2,j_empirical,ci_lower,ci_upper,epochs_run,wall_seconds"
        assert "wall" not in res.dumps()


class TestPredictorTraining:
    def test_two_class_accuracy(self):
        data = two_class(n=600, seed=0, class_sep=3.0)
        cfg = predictor_config(max_epochs=15, optimizer={"kind": "adam", "learning_rate": 0.05})
        d = train_predictor([{"type": "dense", "units": 2}], data, cfg)
        assert d.frozen
        assert d.accuracy(data.features, data.labels) > 0.9
        assert d.history.epochs_run <= 15

    def test_deterministic(self):
        data = two_class(n=200, seed=1)
        cfg = predictor_config(max_epochs=3)
        a = train_predictor([{"type": "dense", "units": 2}], data, cfg)
        b = train_predictor([{"type": "dense", "units": 2}], data, cfg)
        assert a.params.digest() == b.params.digest()

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_predictor([{"type": "dense", "units": 2}], Dataset(np.zeros((10, 2)), np.zeros(10, int)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        data = linear_regression(n=100, seed=0)
        cfg = predictor_config(optimizer={"kind": "sgd", "learning_rate": 1e6}, max_epochs=20, batch_size=10)
        with pytest.raises(DivergenceError):
            train_predictor([{"type": "dense", "units": 1}], data, cfg, loss_kind="squared-error")


class TestLocalizerTraining:
    def test_requires_frozen(self):
        d = Predictor([{"type": "dense", "units": 1}], (3,), "squared-error")
        with pytest.raises(FrozenPredictorError):
            train_localizer(d, ConstantLocalizer(3, 1.0), Dataset(np.zeros((5, 3)), np.zeros(5)))

    def test_constant_localizer_finds_greedy_delta(self):
        beta = np.array([3.0, -1.0, 2.0])
        data = linear_regression(n=400, beta=beta, seed=0)
        d = LinearPredictor(beta)
        loc = ConstantLocalizer(3, 1.5)
        cfg = localizer_config(1.5, optimizer={"kind": "adam", "learning_rate": 0.05}, max_epochs=60,
                               batch_size=50)
        digest = d.params.digest()
        train_localizer(d, loc, data, cfg)
        g = greedy_linear_delta(beta, 1.5)
        # the squared-error objective is symmetric under delta -> -delta
        err = min(np.abs(loc.delta() - g).max(), np.abs(loc.delta() + g).max())
        assert err < 0.05
        assert d.params.digest() == digest


class TestSweepTraining:
    def test_small_cae_sweep(self):
        data = two_class(n=300, p=8, informative=2, seed=0)
        d = train_predictor([{"type": "dense", "units": 2}], data, predictor_config(max_epochs=10))
        cfg = CaeConfig((8,), encoder=[], hidden=[8], decoder=[], name="tiny")
        tc = localizer_config(2, optimizer={"kind": "adam", "learning_rate": 1e-2}, max_epochs=3)
        res = sweep_tau(d, LocalizerFactory(cfg, 0), data, data, [2, 4, 8], 0.99, cfg=tc, B=100,
                        full_sweep=True)
        assert [c.tau for c in res.cells] == [2, 4, 8]
        for c in res.cells:
            assert c.report.empirical_j <= c.tau + 1e-9
            assert c.report.ci_lower <= c.r2 <= c.report.ci_upper
        again = sweep_tau(d, LocalizerFactory(cfg, 0), data, data, [2, 4, 8], 0.99, cfg=tc, B=100,
                          full_sweep=True)
        assert again.dumps() == res.dumps()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_architecture_sweep_records_failures(self):
        data = two_class(n=100, p=6, informative=2, seed=0)
        d = train_predictor([{"type": "dense", "units": 2}], data, predictor_config(max_epochs=3))
        good = CaeConfig((6,), encoder=[], hidden=[4], decoder=[], name="ok")
        tc = localizer_config(2, optimizer={"kind": "adam", "learning_rate": 1e-2}, max_epochs=2)
        bad = localizer_config(2, optimizer={"kind": "sgd", "learning_rate": 1e300}, max_epochs=2)
        rows = architecture_sweep(d, [good], 2.0, data, tc, k=3)
        assert rows[0].name == "ok" and len(rows[0].fold_r2) == 3 and not rows[0].errors
        rows = architecture_sweep(d, [good], 2.0, data, bad, k=3)
        assert len(rows[0].errors) == 3 and "DivergenceError" in rows[0].errors[0]
        assert np.isnan(rows[0].mean_r2)
