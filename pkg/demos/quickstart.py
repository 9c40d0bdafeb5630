"""Pure and complete fusion on a small synthetic field through the Python API.

Run from the repository root::

    python3 demos/quickstart.py

Takes a few seconds on one core.
"""
import numpy as np

from permfusion.optimize import DEConfig
from permfusion.pipeline import RunConfig, metrics_table, prepare_wells, run_workflow
from permfusion.seismic import TrainConfig
from permfusion.synthgen import SynthConfig, make_field

field = make_field(SynthConfig(nx=30, ny=30, n_wells=20, corr_cells=8.0, cluster_spread=200.0, seed=3))
config = RunConfig(de=DEConfig(popsize=16, n_iter=30), training=TrainConfig(epochs=6), seed=3)

# effective-to-absolute well-test conversion, then Q-Q matching of the logs
wells = prepare_wells(field.wells, config, field.fluids, field.relperm)
run = run_workflow(wells, field.grid, field.volume, config, prepared=True)

print("pure constants    ", {k: round(v, 3) for k, v in run.pure.params.to_dict().items()})
print("complete constants", {k: round(v, 3) for k, v in run.complete.params.to_dict().items()})
print("training samples  ", run.seismic.n_train, "from", len(wells), "wells")

table = metrics_table(run)
for metric, row in table.items():
    print(f"{metric:>4}", {k: round(v, 5) for k, v in row.items() if v is not None})

truth = field.truth.values
for name, m in (("pure", run.pure.perm_map), ("complete", run.complete.perm_map)):
    rmse = np.sqrt(np.mean((m.values - truth) ** 2))
    print(f"{name:>8} map RMSE against truth: {rmse:.3f} log10 mD")
