"""Paired bootstrap tests and percentile confidence intervals.

The two-sided p-value doubles the smaller tail fraction of resampled mean
differences (``<= 0`` and ``>= 0``) and is clamped to
``[2 / (resamples + 1), 1]`` so a finite number of resamples never reports
zero.  Intervals are plain percentile intervals (no BCa correction).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

P_VALUE_CONVENTION = "two-sided: 2*min(P(mean*<=0), P(mean*>=0)), clamped to [2/(R+1), 1]"
DEFAULT_RESAMPLES = 5000


@dataclass(frozen=True)
class PairedSample:
    ids: tuple
    values_a: np.ndarray
    values_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.values_a, dtype=np.float64)
        b = np.asarray(self.values_b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1 or len(self.ids) != len(a):
            raise ValueError("ids, values_a and values_b must be aligned 1-D sequences")
        if len(a) < 2:
            raise ValueError("need at least two pairs")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("ids must be unique")
        object.__setattr__(self, "values_a", a)
        object.__setattr__(self, "values_b", b)

    @classmethod
    def from_mappings(cls, a: dict, b: dict) -> "PairedSample":
        """Pair two ``id -> value`` mappings; the id sets must match exactly."""
        if set(a) != set(b):
            missing = sorted(set(a) ^ set(b))[:5]
            raise ValueError(f"unpaired ids, e.g. {missing}")
        ids = tuple(sorted(a))
        return cls(ids, [a[i] for i in ids], [b[i] for i in ids])

    @property
    def differences(self) -> np.ndarray:
        return self.values_b - self.values_a


@dataclass(frozen=True)
class BootstrapResult:
    mean_difference: float
    p_value: float
    ci_low: float
    ci_high: float
    resamples: int
    seed: int | None
    method: str = "random"


def _tail_p(means: np.ndarray, resamples: int) -> float:
    low = np.mean(means <= 0)
    high = np.mean(means >= 0)
    p = 2.0 * min(low, high)
    return float(min(1.0, max(p, 2.0 / (resamples + 1))))


def _percentile_ci(means: np.ndarray, level: float) -> tuple[float, float]:
    alpha = (100.0 - level) / 2.0
    lo, hi = np.percentile(means, [alpha, 100.0 - alpha])
    return float(lo), float(hi)


def bootstrap_means(values, resamples: int, seed) -> np.ndarray:
    """Means of ``resamples`` with-replacement resamples of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = len(values)
    out = np.empty(resamples)
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, resamples, chunk):
        stop = min(resamples, start + chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        out[start:stop] = values[idx].mean(axis=1)
    return out


def enumerate_means(values) -> np.ndarray:
    """Means of all ``n**n`` equally likely resamples (small ``n`` only)."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n**n > 2_000_000:
        raise ValueError(f"exhaustive enumeration of {n}**{n} resamples is too large")
    idx = np.array(list(itertools.product(range(n), repeat=n)))
    return values[idx].mean(axis=1)


def paired_bootstrap(sample: PairedSample, resamples: int = DEFAULT_RESAMPLES, seed=0,
                     exhaustive: bool = False, level: float = 95.0) -> BootstrapResult:
    """Bootstrap test of ``mean(b - a) == 0`` over paired instances.

    With ``exhaustive=True`` every one of the ``n**n`` index resamples is
    used once instead of drawing ``resamples`` at random.
    """
    d = sample.differences
    if exhaustive:
        means = enumerate_means(d)
        resamples = len(means)
        seed = None
        method = "exhaustive"
    else:
        if resamples < 1:
            raise ValueError("resamples must be positive")
        means = bootstrap_means(d, resamples, seed)
        method = "random"
    lo, hi = _percentile_ci(means, level)
    return BootstrapResult(float(d.mean()), _tail_p(means, resamples), lo, hi, resamples, seed, method)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def mean_ci(values, level: float = 95.0, resamples: int = DEFAULT_RESAMPLES, seed=0) -> tuple[float, float, float]:
    """Sample mean with a bootstrap percentile interval."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise ValueError("need at least two values")
    means = bootstrap_means(values, resamples, seed)
    lo, hi = _percentile_ci(means, level)
    m = float(values.mean())
    # resampled means of constant data can differ from the mean by an ulp
    tol = 1e-12 * max(1.0, abs(m))
    if m - tol <= lo <= m + tol:
        lo = min(lo, m)
    if m - tol <= hi <= m + tol:
        hi = max(hi, m)
    return m, lo, hi
