"""Analytical forward-pass cost model.

One forward pass over ``L`` tokens costs ``c1 * L + c2 * L**2``: the linear
term is the usual ``2 * params`` per token, the quadratic term covers the
attention score and value products (``4 * n_layers * d_model`` per token
pair).  Integer coefficients keep every total exact.
"""

from __future__ import annotations

from dataclasses import dataclass

from .decoder import DecodeTrace


@dataclass(frozen=True)
class CostModel:
    c1: int | float
    c2: int | float = 0
    n_params: int | None = None

    def __post_init__(self):
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if self.c2 < 0:
            raise ValueError("c2 must be nonnegative")

    @classmethod
    def dense(cls, n_params: int, n_layers: int, d_model: int) -> "CostModel":
        return cls(2 * n_params, 4 * n_layers * d_model, n_params)

    @classmethod
    def for_model(cls, model) -> "CostModel":
        cfg = model.config
        return cls.dense(model.num_parameters(), cfg.n_layers, cfg.d_model)

    @classmethod
    def llada_8b(cls) -> "CostModel":
        """8B-parameter, 32-layer, 4096-wide preset for paper-scale arithmetic."""
        return cls.dense(8_000_000_000, 32, 4096)


@dataclass(frozen=True)
class FlopsReport:
    fc: int | float
    sc: int | float

    @property
    def saved_fraction(self) -> float:
        return 1.0 - self.sc / self.fc

    @property
    def saved_percent(self) -> float:
        return savings(self.fc, self.sc)


def step_flops(length: int, m: CostModel):
    if length < 1:
        raise ValueError("processed length must be at least 1")
    return m.c1 * length + m.c2 * length * length


def trace_flops(trace: DecodeTrace, m: CostModel):
    """Sum over every charged forward pass, the SC cropping pass included."""
    return sum((step_flops(L, m) for L in trace.processed_lengths), 0)


def savings(fc, sc) -> float:
    """Percent of the baseline compute saved."""
    if fc <= 0:
        raise ValueError("baseline FLOPs must be positive")
    return 100.0 * (1.0 - sc / fc)
