"""
Is the difference real?  Paired bootstrap
=========================================

FC and SC are run on the same prompts, so their scores are compared pair
by pair.  Resampling the per-instance differences gives a p-value and a
confidence interval without distributional assumptions.
"""

import numpy as np

from smartcrop.stats import PairedSample, paired_bootstrap, significance_stars

# With three pairs all 27 resamples can be enumerated: 7 have a mean <= 0,
# 20 have a mean >= 0, so p = 2 * 7/27.
tiny = PairedSample((0, 1, 2), [0, 0, 0], [1, -1, 1])
res = paired_bootstrap(tiny, exhaustive=True)
print(f"exhaustive p = {res.p_value:.4f} (14/27 = {14 / 27:.4f})")

# %%
# A larger sample with a genuine shift.
rng = np.random.default_rng(0)
fc = rng.binomial(1, 0.6, size=200).astype(float)
sc = np.where(rng.uniform(size=200) < 0.15, 1.0, fc)
res = paired_bootstrap(PairedSample(tuple(range(200)), fc, sc), resamples=5000, seed=0)
print(f"mean diff {res.mean_difference:+.3f}  95% CI [{res.ci_low:+.3f}, {res.ci_high:+.3f}]  "
      f"p = {res.p_value:.4f} {significance_stars(res.p_value)}")
