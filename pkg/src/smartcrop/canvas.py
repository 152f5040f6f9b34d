"""The fixed-length decoding canvas: prompt followed by masked generation slots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Canvas:
    """Token buffer of length ``L_c = prompt_len + generation slots``.

    ``masked[i]`` is True while slot ``i`` still holds the mask token.
    Positions below ``prompt_len`` are never masked.
    """

    tokens: np.ndarray
    masked: np.ndarray
    prompt_len: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.masked = np.asarray(self.masked, dtype=bool)
        if self.tokens.shape != self.masked.shape or self.tokens.ndim != 1:
            raise ValueError("tokens and masked must be 1-D arrays of equal length")
        if not 1 <= self.prompt_len <= len(self.tokens):
            raise ValueError("prompt_len out of range")
        if self.masked[: self.prompt_len].any():
            raise ValueError("prompt positions cannot be masked")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_masked(self) -> int:
        return int(self.masked.sum())

    @property
    def l_new(self) -> int:
        return len(self.tokens) - self.prompt_len

    def copy(self) -> "Canvas":
        return Canvas(self.tokens.copy(), self.masked.copy(), self.prompt_len)


def init_canvas(prompt, l_new: int, mask_id: int) -> Canvas:
    """Prompt tokens followed by ``l_new`` mask tokens."""
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.ndim != 1 or len(prompt) == 0:
        raise ValueError("prompt must be a nonempty 1-D token sequence")
    if l_new < 1:
        raise ValueError("l_new must be at least 1")
    tokens = np.concatenate([prompt, np.full(l_new, mask_id, dtype=np.int64)])
    masked = np.zeros(len(tokens), dtype=bool)
    masked[len(prompt):] = True
    return Canvas(tokens, masked, len(prompt))
