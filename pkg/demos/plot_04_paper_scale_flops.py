"""
Compute savings at 8B scale
===========================

The cost model is analytic, so the savings of a long-canvas benchmark can
be worked out for a large model without running it.  Here: a 1367-position
canvas with 1280 generation slots and 1280 steps, cropped to 222 positions
with the step count rescaled to keep tokens-per-step constant.
"""

from smartcrop.decoder import rescaled_steps
from smartcrop.flops import CostModel, savings, step_flops

m = CostModel.llada_8b()
L_c, T, L_hat = 1367, 1280, 222
L_p = L_c - T
T_prime = rescaled_steps(T, L_hat - L_p, T)

fc = T * step_flops(L_c, m)
sc = step_flops(L_c, m) + T_prime * step_flops(L_hat, m)
print(f"T' = {T_prime}")
print(f"FC {fc:.3e}  SC {sc:.3e}  saved {savings(fc, sc):.2f}%")

# %%
# Dropping the quadratic attention term changes little at this length:
# the linear 2*params term dominates.
lin = CostModel(m.c1)
print(f"linear-only saved {savings(T * step_flops(L_c, lin), step_flops(L_c, lin) + T_prime * step_flops(L_hat, lin)):.2f}%")
