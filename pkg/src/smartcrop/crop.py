"""Length prediction from first-pass EoS probabilities and canvas cropping.

Given per-slot EoS probabilities ``phi`` on the generation region, the
probability that the output has terminated by total length ``l`` is

    Pr(L* <= l) = 1 - prod_{j = L_p + 1}^{l} (1 - phi_j)

and the crop point is the smallest ``l`` where this reaches ``tau``.
Lengths are totals (prompt included) and 1-based, so generation slot ``j``
(0-based) corresponds to total length ``L_p + 1 + j``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .canvas import Canvas
from .neural import row_softmax
from .vocab import Vocabulary


@dataclass(frozen=True)
class EosProbabilities:
    prompt_len: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or len(vals) == 0:
            raise ValueError("need at least one generation slot")
        if np.any(~np.isfinite(vals)) or np.any((vals < 0) | (vals > 1)):
            raise ValueError("EoS probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def canvas_len(self) -> int:
        return self.prompt_len + len(self.values)


@dataclass(frozen=True)
class SurvivalCurve:
    """``cumulative[j] = Pr(L* <= prompt_len + 1 + j)``."""

    prompt_len: int
    cumulative: np.ndarray

    @property
    def canvas_len(self) -> int:
        return self.prompt_len + len(self.cumulative)

    @property
    def lengths(self) -> np.ndarray:
        return np.arange(self.prompt_len + 1, self.canvas_len + 1)

    def at(self, length: int) -> float:
        """Cumulative termination probability at total length ``length``."""
        return float(self.cumulative[length - self.prompt_len - 1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["position", "cumulative_prob"])
            for pos, c in zip(self.lengths, self.cumulative):
                w.writerow([int(pos), repr(float(c))])


@dataclass(frozen=True)
class CropDecision:
    tau: float
    predicted_length: int
    threshold_reached: bool
    curve: SurvivalCurve

    @property
    def predicted_new_tokens(self) -> int:
        return self.predicted_length - self.curve.prompt_len


def eos_probabilities(logits, vocab: Vocabulary, prompt_len: int) -> EosProbabilities:
    """Softmax EoS mass at each generation slot; prompt rows are ignored."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != vocab.size:
        raise ValueError(f"logits must have shape (L_c, {vocab.size})")
    if logits.shape[0] <= prompt_len:
        raise ValueError("canvas has no generation slots beyond the prompt")
    probs = row_softmax(logits[prompt_len:])
    return EosProbabilities(prompt_len, probs[:, vocab.eos_id])


def survival_curve(p: EosProbabilities) -> SurvivalCurve:
    """Cumulative termination curve, accumulated in log space."""
    with np.errstate(divide="ignore"):
        log_survive = np.cumsum(np.log1p(-p.values))
    # log_survive is -inf from the first phi == 1 onwards, giving exactly 1
    cumulative = -np.expm1(log_survive)
    return SurvivalCurve(p.prompt_len, cumulative)


def predicted_length(curve: SurvivalCurve, tau: float) -> CropDecision:
    """Smallest total length whose cumulative probability reaches ``tau``.

    Falls back to the full canvas with ``threshold_reached=False`` when no
    position qualifies.
    """
    if not 0.0 <= tau <= 1.0 or math.isnan(tau):
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    hits = np.flatnonzero(curve.cumulative >= tau)
    if len(hits) == 0:
        return CropDecision(tau, curve.canvas_len, False, curve)
    return CropDecision(tau, curve.prompt_len + 1 + int(hits[0]), True, curve)


def perturb_length(
    length: int, delta: float, prompt_len: int, canvas_len: int, scale_generated_only: bool = False
) -> int:
    """``round(length * (1 + delta))`` rounded half-up, clamped to the canvas.

    By default the total length (prompt included) is scaled.  With
    ``scale_generated_only`` only the generated part ``length - prompt_len``
    is scaled.  ``delta`` is interpreted through its decimal repr so that
    grid values like 0.3 round exactly.
    """
    if not -0.5 <= delta <= 0.5:
        raise ValueError("delta must lie in [-0.5, 0.5]")
    factor = 1 + Fraction(repr(float(delta)))
    if scale_generated_only:
        scaled = prompt_len + (length - prompt_len) * factor
    else:
        scaled = length * factor
    rounded = math.floor(scaled + Fraction(1, 2))
    return int(min(max(rounded, prompt_len + 1), canvas_len))


def crop_canvas(canvas: Canvas, target_length: int) -> Canvas:
    """Drop trailing slots so the canvas has ``target_length`` positions.

    Only still-masked slots may be removed.
    """
    L_p = canvas.prompt_len
    if not L_p + 1 <= target_length <= len(canvas):
        raise ValueError(
            f"crop target {target_length} outside [{L_p + 1}, {len(canvas)}]"
        )
    if not canvas.masked[target_length:].all():
        raise ValueError("crop would remove an unmasked position")
    return Canvas(canvas.tokens[:target_length].copy(), canvas.masked[:target_length].copy(), L_p)


def predict_crop(logits, vocab: Vocabulary, prompt_len: int, tau: float) -> CropDecision:
    """eos_probabilities -> survival_curve -> predicted_length in one call."""
    return predicted_length(survival_curve(eos_probabilities(logits, vocab, prompt_len)), tau)
