"""Train a 7-vs-9 classifier on the bundled MNIST subset, sweep the budget
and export overlays for a few test digits.

Takes roughly a minute per budget on one core.

    python demos/mnist_sweep.py [out_dir]
"""
import sys
from pathlib import Path

from dflocate import load_mnist79, split, sweep_tau, train_predictor, localizer_config, predictor_config
from dflocate.data import filter_classes
from dflocate.heatmap import export_heatmaps
from dflocate.localizer import CaeConfig
from dflocate.metrics import format_table
from dflocate.training import LocalizerFactory

out = Path(sys.argv[1] if len(sys.argv) > 1 else "mnist_demo")
data = filter_classes(load_mnist79(), [7, 9], relabel=True)
train, test = split(data, [0.8, 0.2], seed=0)

spec = [{"type": "conv2d", "filters": 16, "kernel": 5, "stride": 2}, {"type": "relu"},
        {"type": "conv2d", "filters": 32, "kernel": 5, "stride": 2}, {"type": "relu"},
        {"type": "dense", "units": 2}]
d = train_predictor(spec, train, predictor_config(batch_size=16, max_epochs=60), l1_weight=1e-4)
print("test accuracy", d.accuracy(test.features, test.labels))

arch = CaeConfig((28, 28), encoder=[(8, 3), (4, 3)], hidden=[32], decoder=[(4, 3), (8, 3)])
cfg = localizer_config(1.0, optimizer={"kind": "adam", "learning_rate": 1e-3}, max_epochs=20, batch_size=16)
res = sweep_tau(d, LocalizerFactory(arch, 0), train, test, [4, 8, 12, 18], target_r2=0.5, cfg=cfg)

print(format_table([(f"tau={c.tau:g}", c.report) for c in res.cells]))
print("selected tau:", res.selected_tau)
for cell in res.cells:
    export_heatmaps(cell.localizer, test.features, range(4), out / f"tau{cell.tau:g}")
print("overlays in", out)
