"""
From EoS probabilities to a crop point
======================================

A masked diffusion model sees the whole canvas at once, so a single
forward pass already says, for every slot, how likely that slot is to be
end-of-sequence.  Chaining those per-slot probabilities gives the
probability that the output has *finished* by a given length, and the crop
point is the first length where that probability reaches a threshold tau.
"""

import numpy as np

from smartcrop.crop import EosProbabilities, predicted_length, survival_curve

# Three prompt tokens, then six generation slots with rising EoS mass.
phi = EosProbabilities(prompt_len=3, values=[0.0, 0.05, 0.2, 0.5, 0.9, 0.99])
curve = survival_curve(phi)

for length, c in zip(curve.lengths, curve.cumulative):
    print(f"total length {length}:  Pr(done) = {c:.4f}")

# %%
# Lower thresholds crop earlier; the crop point can only move right as tau
# grows.
for tau in (0.5, 0.75, 0.9, 0.95, 0.99):
    dec = predicted_length(curve, tau)
    print(f"tau={tau:<5} L_hat={dec.predicted_length}  ({dec.predicted_new_tokens} new tokens)")

# %%
# When no slot is confident enough the whole canvas is kept and the
# decision is flagged.
flat = survival_curve(EosProbabilities(3, np.full(6, 0.01)))
dec = predicted_length(flat, 0.9)
print("fallback:", dec.predicted_length, "threshold reached:", dec.threshold_reached)
