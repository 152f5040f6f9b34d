"""Dense float64 building blocks: matmul, softmax, masked cross-entropy, Adam
and a finite-difference gradient checker.

Matrices are plain 2-D ``numpy.ndarray`` objects in float64.  Every public
function validates its inputs and raises ``ValueError`` on bad shapes or
non-finite data.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "matmul",
    "row_softmax",
    "log_softmax",
    "masked_cross_entropy",
    "OptimizerConfig",
    "ParamStore",
    "optimizer_step",
    "gradient_check",
]


def _as_matrix(m, name: str) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Standard matrix product with an explicit shape check."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(m) -> np.ndarray:
    """Softmax over the last axis, stabilised by subtracting the row max.

    Accepts any array with at least one dimension; rows are the last axis.
    """
    x = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("row_softmax: non-finite input")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(m) -> np.ndarray:
    x = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("log_softmax: non-finite input")
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_cross_entropy(logits, targets, mask) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of ``targets`` over the masked rows.

    Parameters
    ----------
    logits : ndarray, shape (L, V)
    targets : int array, shape (L,)
    mask : bool array, shape (L,)
        Positions contributing to the loss. At least one must be set.

    Returns
    -------
    loss : float
    grad : ndarray, shape (L, V)
        d loss / d logits; rows outside the mask are exactly zero.
    """
    logits = _as_matrix(logits, "logits")
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n_rows, vocab = logits.shape
    if targets.shape != (n_rows,) or mask.shape != (n_rows,):
        raise ValueError("targets and mask need one entry per logit row")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("masked_cross_entropy: empty mask")
    if np.any((targets[mask] < 0) | (targets[mask] >= vocab)):
        raise ValueError("target id out of vocabulary range")

    logp = log_softmax(logits[mask])
    rows = np.arange(n)
    loss = float(-logp[rows, targets[mask]].mean())

    grad = np.zeros_like(logits)
    g = np.exp(logp)
    g[rows, targets[mask]] -= 1.0
    grad[mask] = g / n
    return loss, grad


@dataclass
class OptimizerConfig:
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class ParamStore:
    """Named float64 parameters with same-shape gradient and Adam moment slots."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name in self.params:
            out.params[name] = self.params[name].copy()
            out.grads[name] = self.grads[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        return out


def optimizer_step(store: ParamStore, cfg: OptimizerConfig, lr: float | None = None) -> ParamStore:
    """One bias-corrected Adam update, in place. Increments ``cfg.step``.

    ``lr`` overrides ``cfg.learning_rate`` for this step (used by schedules).
    """
    lr = cfg.learning_rate if lr is None else lr
    cfg.step += 1
    t = cfg.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in store.params.items():
        g = store.grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # zero moments give a zero step, so zero gradients are an exact fixed point
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return store


def gradient_check(
    f: Callable[[ParamStore], tuple[float, dict[str, np.ndarray]]],
    store: ParamStore,
    h: float = 1e-5,
    coords: list[tuple[str, tuple[int, ...]]] | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``f(store)`` must return ``(value, grads)`` where ``grads`` maps parameter
    names to analytic gradients.  ``coords`` restricts the check to the given
    ``(name, index)`` pairs; by default every coordinate is checked.

    Returns the maximum relative error
    ``|fd - an| / max(|fd|, |an|, 1e-12)``; coordinates where both gradients
    are below 1e-12 in magnitude count as exact agreement.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    value, analytic = f(store)
    if not np.isfinite(value):
        raise FloatingPointError("gradient_check: f returned a non-finite value")
    if coords is None:
        coords = [(name, idx) for name, p in store.params.items() for idx in np.ndindex(p.shape)]

    worst = 0.0
    for name, idx in coords:
        p = store.params[name]
        orig = p[idx]
        p[idx] = orig + h
        fp, _ = f(store)
        p[idx] = orig - h
        fm, _ = f(store)
        p[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"gradient_check: non-finite f near {name}{idx}")
        fd = (fp - fm) / (2.0 * h)
        an = float(analytic[name][idx])
        scale = max(abs(fd), abs(an))
        if scale < 1e-12:
            continue
        worst = max(worst, abs(fd - an) / scale)
    return worst
