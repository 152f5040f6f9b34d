"""Fixed-canvas masked-diffusion decoding with optional first-pass cropping.

Full-context (FC) decoding denoises the whole ``L_p + L_new`` canvas for
``T`` steps.  SmartCrop (SC) decoding runs one forward pass on the full
canvas, predicts the total length from the EoS survival curve, drops the
trailing mask slots beyond it and denoises the shorter canvas.

Unmasking is greedy: every masked slot proposes its argmax token, and the
``k`` slots with the highest max-probability are committed, ties going to
the lower position.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .canvas import Canvas, init_canvas
from .crop import CropDecision, crop_canvas, predict_crop
from .model import LogitOracle
from .neural import row_softmax

FULL_CONTEXT = "full-context"
SMARTCROP = "smartcrop"
PRESERVE_DENSITY = "preserve-density"
PRESERVE_STEPS = "preserve-steps"

__all__ = [
    "Canvas",
    "init_canvas",
    "Schedule",
    "build_schedule",
    "DecodeConfig",
    "DecodeTrace",
    "DecodeError",
    "denoise_step",
    "decode",
    "eos_truncate",
    "rescaled_steps",
]


class DecodeError(RuntimeError):
    """An oracle call failed; the message carries the step index."""


@dataclass(frozen=True)
class Schedule:
    steps: int
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)


def build_schedule(n_masked: int, steps: int) -> Schedule:
    """Spread ``n_masked`` unmaskings over ``steps`` as evenly as possible.

    Earlier steps take the larger share; when ``steps > n_masked`` the
    trailing steps get zero.
    """
    if steps < 1 or n_masked < 1:
        raise ValueError("need steps >= 1 and n_masked >= 1")
    base, rem = divmod(n_masked, steps)
    return Schedule(steps, tuple(base + 1 if i < rem else base for i in range(steps)))


def rescaled_steps(steps: int, kept_slots: int, l_new: int) -> int:
    """Step count that keeps tokens-per-step roughly constant after a crop."""
    return max(1, math.floor(Fraction(steps * kept_slots, l_new) + Fraction(1, 2)))


@dataclass
class DecodeConfig:
    mode: str = FULL_CONTEXT
    tau: float | None = None
    schedule_mode: str = PRESERVE_DENSITY
    reuse_first_pass: bool = True
    forced_length: int | None = None

    def __post_init__(self):
        if self.mode not in (FULL_CONTEXT, SMARTCROP):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.schedule_mode not in (PRESERVE_DENSITY, PRESERVE_STEPS):
            raise ValueError(f"unknown schedule mode {self.schedule_mode!r}")
        if self.mode == FULL_CONTEXT:
            if self.tau is not None:
                raise ValueError("tau only applies to smartcrop mode")
            if self.forced_length is not None:
                raise ValueError("forced_length only applies to smartcrop mode")
        else:
            if self.tau is None and self.forced_length is None:
                raise ValueError("smartcrop mode needs tau (or a forced_length)")
            if self.tau is not None and not 0.0 <= self.tau <= 1.0:
                raise ValueError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass
class DecodeTrace:
    """Everything a decode did, one entry per charged forward pass."""

    mode: str
    prompt_len: int
    l_new: int
    steps: int
    processed_lengths: list[int] = field(default_factory=list)
    unmask_counts: list[int] = field(default_factory=list)
    tokens: np.ndarray | None = None
    tau: float | None = None
    schedule_mode: str | None = None
    reuse_first_pass: bool | None = None
    crop: CropDecision | None = None
    crop_length: int | None = None
    forced_length: int | None = None
    steps_after_crop: int | None = None

    @property
    def canvas_len(self) -> int:
        return self.prompt_len + self.l_new

    @property
    def steps_executed(self) -> int:
        return len(self.processed_lengths)

    @property
    def fallback(self) -> bool:
        """True when the threshold was never reached and the full canvas was kept."""
        return (
            self.crop is not None
            and self.forced_length is None
            and not self.crop.threshold_reached
        )

    @property
    def predicted_length(self) -> int | None:
        return None if self.crop is None else self.crop.predicted_length

    @property
    def final_length(self) -> int:
        return self.crop_length if self.crop_length is not None else self.canvas_len

    def generated(self, eos_id: int) -> list[int]:
        return eos_truncate(self.tokens, self.prompt_len, eos_id)

    def to_record(self, id: str, vocab) -> dict:
        rec = {
            "id": id,
            "mode": self.mode,
            "L_p": self.prompt_len,
            "L_new": self.l_new,
            "T": self.steps,
            "processed_lengths": list(map(int, self.processed_lengths)),
            "unmask_counts": list(map(int, self.unmask_counts)),
            "generated_text": vocab.decode(self.generated(vocab.eos_id)),
        }
        if self.mode == SMARTCROP:
            rec.update(
                tau=self.tau,
                schedule_mode=self.schedule_mode,
                reuse_first_pass=self.reuse_first_pass,
                T_prime=self.steps_after_crop,
                L_hat=self.predicted_length,
                crop_length=self.crop_length,
                forced_length=self.forced_length,
                threshold_reached=None if self.crop is None else self.crop.threshold_reached,
            )
        return rec

    def to_json(self, id: str, vocab) -> str:
        return json.dumps(self.to_record(id, vocab), sort_keys=True)


def _commit(canvas: Canvas, logits: np.ndarray, k: int) -> Canvas:
    masked_pos = np.flatnonzero(canvas.masked)
    if k > len(masked_pos):
        raise ValueError(f"cannot unmask {k} of {len(masked_pos)} masked positions")
    out = canvas.copy()
    if k == 0:
        return out
    probs = row_softmax(logits[masked_pos])
    candidates = probs.argmax(axis=1)
    confidence = probs.max(axis=1)
    # stable sort on -confidence keeps lower positions first among ties
    chosen = np.argsort(-confidence, kind="stable")[:k]
    pos = masked_pos[chosen]
    out.tokens[pos] = candidates[chosen]
    out.masked[pos] = False
    return out


def denoise_step(oracle: LogitOracle, canvas: Canvas, k: int) -> Canvas:
    """One forward pass, then commit the ``k`` most confident masked slots."""
    if k > canvas.n_masked or k < 0:
        raise ValueError(f"cannot unmask {k} of {canvas.n_masked} masked positions")
    logits = oracle.logits(canvas)
    return _commit(canvas, logits, k)


def _run_schedule(oracle, canvas, counts, trace, first_step: int) -> Canvas:
    for i, k in enumerate(counts):
        if k == 0:
            continue
        try:
            logits = oracle.logits(canvas)
        except Exception as exc:
            raise DecodeError(f"oracle failed at step {first_step + i}: {exc}") from exc
        canvas = _commit(canvas, logits, k)
        trace.processed_lengths.append(len(canvas))
        trace.unmask_counts.append(k)
    return canvas


def decode(oracle: LogitOracle, prompt, l_new: int, steps: int, cfg: DecodeConfig) -> DecodeTrace:
    """Decode one prompt under the FC or SC protocol."""
    vocab = oracle.vocab
    canvas = init_canvas(prompt, l_new, vocab.mask_id)
    L_p = canvas.prompt_len
    trace = DecodeTrace(cfg.mode, L_p, l_new, steps)

    if cfg.mode == FULL_CONTEXT:
        canvas = _run_schedule(oracle, canvas, build_schedule(l_new, steps).counts, trace, 0)
        trace.tokens = canvas.tokens
        return trace

    trace.tau = cfg.tau
    trace.schedule_mode = cfg.schedule_mode
    trace.reuse_first_pass = cfg.reuse_first_pass
    trace.forced_length = cfg.forced_length
    try:
        first = oracle.logits(canvas)
    except Exception as exc:
        raise DecodeError(f"oracle failed at step 0: {exc}") from exc
    if cfg.tau is not None:
        trace.crop = predict_crop(first, vocab, L_p, cfg.tau)
    if cfg.forced_length is not None:
        target = cfg.forced_length
    else:
        target = trace.crop.predicted_length
    canvas = crop_canvas(canvas, target)
    trace.crop_length = target
    kept = target - L_p

    if cfg.schedule_mode == PRESERVE_DENSITY:
        t_prime = rescaled_steps(steps, kept, l_new)
    else:
        t_prime = steps
    trace.steps_after_crop = t_prime
    counts = build_schedule(kept, t_prime).counts

    trace.processed_lengths.append(len(first))
    if cfg.reuse_first_pass:
        canvas = _commit(canvas, first[:target], counts[0])
        trace.unmask_counts.append(counts[0])
        counts = counts[1:]
        first_step = 1
    else:
        trace.unmask_counts.append(0)
        first_step = 1
    canvas = _run_schedule(oracle, canvas, counts, trace, first_step)
    trace.tokens = canvas.tokens
    return trace


def eos_truncate(tokens, prompt_len: int, eos_id: int) -> list[int]:
    """Generated tokens up to (not including) the first EoS."""
    gen = [int(t) for t in np.asarray(tokens)[prompt_len:]]
    try:
        return gen[: gen.index(eos_id)]
    except ValueError:
        return gen
