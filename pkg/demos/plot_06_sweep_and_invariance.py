"""
How much does the exact crop point matter?
==========================================

Two diagnostics on a trained copy-k model:

* the delta sweep scales each predicted length by (1 + delta); cropping
  below the answer length makes exact match impossible;
* the invariance study re-predicts lengths from canvases of different
  initial sizes; a canvas shorter than the answer truncates the prediction
  at its edge.

Needs ``copyk.bin`` from ``plot_02_train_toy_model.py``.
"""

import sys

from smartcrop.experiments import DELTA_GRID, RunConfig, invariance_study, sensitivity_sweep
from smartcrop.model import load_weights
from smartcrop.tasks import get_preset

model = load_weights(sys.argv[1] if len(sys.argv) > 1 else "copyk.bin")
spec = get_preset("copyk-long")
instances = spec.generate(model.vocab, seed=3, n=30)

sweep = sensitivity_sweep(RunConfig(spec, instances, model, resamples=1000), DELTA_GRID, tau=0.9)
for row in sweep.rows:
    print(f"delta {row['delta']:+.1f}: exact match {row['mean']:.2f} "
          f"[{row['ci_low']:.2f}, {row['ci_high']:.2f}]  avg crop {row['mean_crop_new_tokens']:.1f} slots")

# %%
inv = invariance_study(model, instances, (32, 64, 128), tau=0.9)
for row in inv.rows:
    print(f"L_new {row['L_new']:>3}: median {row['q50']:.0f}, max {row['max']:.0f}, "
          f"{row['n_truncated']} at the canvas edge")
