"""
Full-context decoding versus SmartCrop
======================================

Decode the same prompt twice: once denoising the full 160-slot canvas at
every step, once cropping the canvas after the first pass.  The per-step
processed lengths show where the compute goes.

Needs weights from ``plot_02_train_toy_model.py`` (``copyk.bin``).
"""

import sys

from smartcrop.decoder import FULL_CONTEXT, SMARTCROP, DecodeConfig, decode
from smartcrop.flops import CostModel, savings, trace_flops
from smartcrop.model import load_weights

model = load_weights(sys.argv[1] if len(sys.argv) > 1 else "copyk.bin")
vocab = model.vocab
prompt = vocab.encode("<copy> w07 1 2 <sep>")  # repeat w07 twelve times

fc = decode(model, prompt, 160, 160, DecodeConfig(FULL_CONTEXT))
sc = decode(model, prompt, 160, 160, DecodeConfig(SMARTCROP, tau=0.9))

print("FC:", vocab.decode(fc.generated(vocab.eos_id)))
print("SC:", vocab.decode(sc.generated(vocab.eos_id)))
print(f"SC cropped to {sc.crop_length} positions, {sc.steps_after_crop} steps after the crop")

# %%
# Cost of every forward pass is c1*L + c2*L^2 with coefficients taken from
# the model size.
cost = CostModel.for_model(model)
f_fc, f_sc = trace_flops(fc, cost), trace_flops(sc, cost)
print(f"FC {f_fc:.3e} FLOPs, SC {f_sc:.3e} FLOPs, saved {savings(f_fc, f_sc):.1f}%")
print("first SC passes:", sc.processed_lengths[:5])
