"""Tiny bidirectional masked-diffusion transformer in numpy.

Pre-norm blocks, learned absolute position embeddings, GELU MLPs, float64
throughout.  Backward passes are written out by hand per layer.  The model
is trained with the EoS-as-padding convention: every slot after the answer
is labelled EoS, all the way to the end of the training canvas.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .canvas import Canvas
from .neural import OptimizerConfig, ParamStore, log_softmax, optimizer_step
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)

WEIGHT_MAGIC = b"SCDLMW\x00\x00"
WEIGHT_VERSION = 1


@runtime_checkable
class LogitOracle(Protocol):
    """Anything that maps a canvas to an ``(len(canvas), V)`` logit matrix."""

    vocab: Vocabulary

    def logits(self, canvas: Canvas) -> np.ndarray: ...


@dataclass
class ModelConfig:
    vocab: Vocabulary = field(default_factory=Vocabulary.standard)
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_positions: int = 512

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.d_model, self.n_layers, self.n_heads, self.max_positions) < 1:
            raise ValueError("model dimensions must be positive")
        if self.vocab.mask_id == self.vocab.eos_id:
            raise ValueError("mask and eos ids must differ")

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model


@dataclass
class TrainingConfig:
    """Training loop settings.

    ``l_new`` is the number of generation slots on the training canvas.  With
    ``length_jitter`` each batch instead draws its slot count uniformly from
    ``[longest answer + 1, l_new]`` so the model sees canvases of many sizes.
    A ``tight_fraction`` of batches instead gives every example a canvas of
    only ``len(answer) + 1 + s`` slots, ``s`` uniform in ``0..tight_slack``:
    the near-exact canvases that cropping produces.
    """

    epochs: int = 10
    batch_size: int = 16
    l_new: int = 160
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    length_jitter: bool = True
    tight_fraction: float = 0.25
    tight_slack: int = 8
    warmup_steps: int = 100
    cosine_decay: bool = True
    min_lr_ratio: float = 0.05
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.l_new < 1:
            raise ValueError("invalid training configuration")
        if self.warmup_steps < 0 or not 0 <= self.min_lr_ratio <= 1:
            raise ValueError("invalid learning-rate schedule")
        if not 0 <= self.tight_fraction <= 1 or self.tight_slack < 0:
            raise ValueError("invalid canvas jitter")

    def learning_rate(self, step: int, total_steps: int) -> float:
        """Linear warmup, then cosine decay to ``min_lr_ratio`` of the peak."""
        peak = self.optimizer.learning_rate
        if step < self.warmup_steps:
            return peak * (step + 1) / self.warmup_steps
        if not self.cosine_decay or total_steps <= self.warmup_steps:
            return peak
        frac = (step - self.warmup_steps) / max(1, total_steps - self.warmup_steps)
        return peak * (self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))


# ---------------------------------------------------------------------------
# layer primitives (forward returns a cache consumed by the matching backward)


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _layernorm_back(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    n = xhat.shape[-1]
    dx = (rstd / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(u):
    t = np.tanh(GELU_C * (u + 0.044715 * u**3))
    return 0.5 * u * (1.0 + t), t


def _gelu_back(dy, u, t):
    du = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return dy * du


def _linear_back(dy, x, w):
    d_in, d_out = w.shape
    dw = x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
    db = dy.reshape(-1, d_out).sum(axis=0)
    return dy @ w.T, dw, db


class DiffusionLM:
    """The toy model.  Implements :class:`LogitOracle` via :meth:`logits`."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.vocab = config.vocab
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        d, V, f = config.d_model, config.vocab.size, config.d_ff
        std = 0.02
        s = self.store
        s.add("tok_emb", rng.normal(0, std, (V, d)))
        s.add("pos_emb", rng.normal(0, std, (config.max_positions, d)))
        for i in range(config.n_layers):
            p = f"l{i}."
            s.add(p + "ln1_g", np.ones(d))
            s.add(p + "ln1_b", np.zeros(d))
            s.add(p + "w_qkv", rng.normal(0, std, (d, 3 * d)))
            s.add(p + "b_qkv", np.zeros(3 * d))
            # residual projections scaled down with depth
            s.add(p + "w_o", rng.normal(0, std / math.sqrt(2 * config.n_layers), (d, d)))
            s.add(p + "b_o", np.zeros(d))
            s.add(p + "ln2_g", np.ones(d))
            s.add(p + "ln2_b", np.zeros(d))
            s.add(p + "w_1", rng.normal(0, std, (d, f)))
            s.add(p + "b_1", np.zeros(f))
            s.add(p + "w_2", rng.normal(0, std / math.sqrt(2 * config.n_layers), (f, d)))
            s.add(p + "b_2", np.zeros(d))
        s.add("lnf_g", np.ones(d))
        s.add("lnf_b", np.zeros(d))
        s.add("w_out", rng.normal(0, std, (d, V)))
        s.add("b_out", np.zeros(V))

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    # -- forward / backward -------------------------------------------------

    def forward_batch(self, tokens: np.ndarray, keep_cache: bool = False):
        """Logits for a ``(B, L)`` token batch; returns ``(logits, cache)``."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError("tokens must have shape (B, L)")
        B, L = tokens.shape
        cfg = self.config
        if L > cfg.max_positions:
            raise ValueError(f"canvas length {L} exceeds max_positions {cfg.max_positions}")
        if tokens.min() < 0 or tokens.max() >= self.vocab.size:
            raise ValueError("token id out of vocabulary range")
        P = self.store.params
        H = cfg.n_heads
        d = cfg.d_model
        dh = d // H
        scale = 1.0 / math.sqrt(dh)

        h = P["tok_emb"][tokens] + P["pos_emb"][:L]
        layers = []
        for i in range(cfg.n_layers):
            p = f"l{i}."
            a, ln1 = _layernorm(h, P[p + "ln1_g"], P[p + "ln1_b"])
            qkv = a @ P[p + "w_qkv"] + P[p + "b_qkv"]
            qkv = qkv.reshape(B, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
            q, k, v = qkv[0], qkv[1], qkv[2]
            scores = (q @ k.transpose(0, 1, 3, 2)) * scale
            scores -= scores.max(axis=-1, keepdims=True)
            att = np.exp(scores)
            att /= att.sum(axis=-1, keepdims=True)
            o = (att @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
            h = h + o @ P[p + "w_o"] + P[p + "b_o"]
            m, ln2 = _layernorm(h, P[p + "ln2_g"], P[p + "ln2_b"])
            u = m @ P[p + "w_1"] + P[p + "b_1"]
            g, t = _gelu(u)
            h = h + g @ P[p + "w_2"] + P[p + "b_2"]
            if keep_cache:
                layers.append((a, ln1, q, k, v, att, o, m, ln2, u, g, t))
        hf, lnf = _layernorm(h, P["lnf_g"], P["lnf_b"])
        logits = hf @ P["w_out"] + P["b_out"]
        cache = (tokens, layers, hf, lnf) if keep_cache else None
        return logits, cache

    def backward(self, cache, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients into ``self.store.grads``."""
        tokens, layers, hf, lnf = cache
        B, L = tokens.shape
        cfg = self.config
        P = self.store.params
        G = self.store.grads
        H = cfg.n_heads
        d = cfg.d_model
        dh = d // H
        scale = 1.0 / math.sqrt(dh)

        dhf, dw, db = _linear_back(dlogits, hf, P["w_out"])
        G["w_out"] += dw
        G["b_out"] += db
        dh_, dg, db = _layernorm_back(dhf, lnf)
        G["lnf_g"] += dg
        G["lnf_b"] += db

        for i in reversed(range(cfg.n_layers)):
            p = f"l{i}."
            a, ln1, q, k, v, att, o, m, ln2, u, g, t = layers[i]
            # MLP branch
            dg_, dw, db = _linear_back(dh_, g, P[p + "w_2"])
            G[p + "w_2"] += dw
            G[p + "b_2"] += db
            du = _gelu_back(dg_, u, t)
            dm, dw, db = _linear_back(du, m, P[p + "w_1"])
            G[p + "w_1"] += dw
            G[p + "b_1"] += db
            dx, dgam, dbet = _layernorm_back(dm, ln2)
            G[p + "ln2_g"] += dgam
            G[p + "ln2_b"] += dbet
            dh_ = dh_ + dx
            # attention branch
            do, dw, db = _linear_back(dh_, o, P[p + "w_o"])
            G[p + "w_o"] += dw
            G[p + "b_o"] += db
            do = do.reshape(B, L, H, dh).transpose(0, 2, 1, 3)
            datt = do @ v.transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ do
            dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
            dq = dscores @ k
            dk = dscores.transpose(0, 1, 3, 2) @ q
            dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, L, 3 * d)
            da, dw, db = _linear_back(dqkv, a, P[p + "w_qkv"])
            G[p + "w_qkv"] += dw
            G[p + "b_qkv"] += db
            dx, dgam, dbet = _layernorm_back(da, ln1)
            G[p + "ln1_g"] += dgam
            G[p + "ln1_b"] += dbet
            dh_ = dh_ + dx

        G["pos_emb"][:L] += dh_.sum(axis=0)
        onehot = np.zeros((B * L, self.vocab.size))
        onehot[np.arange(B * L), tokens.reshape(-1)] = 1.0
        G["tok_emb"] += onehot.T @ dh_.reshape(B * L, d)

    def logits(self, canvas: Canvas) -> np.ndarray:
        return forward(self, canvas)

    def loss_and_grads(self, tokens, targets, loss_mask, accumulate: bool = False) -> float:
        """Mean over the batch of per-sequence masked cross-entropy.

        Gradients land in ``self.store.grads`` (zeroed first unless
        ``accumulate``); the returned loss and gradients are both scaled by
        ``1 / B`` so that equal-length sub-batches can be accumulated.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        loss_mask = np.asarray(loss_mask, dtype=bool)
        if not accumulate:
            self.store.zero_grad()
        logits, cache = self.forward_batch(tokens, keep_cache=True)
        return self._masked_loss_backward(logits, cache, targets, loss_mask, tokens.shape[0])

    def _masked_loss_backward(self, logits, cache, targets, loss_mask, denom: int) -> float:
        B, L, V = logits.shape
        counts = loss_mask.sum(axis=1)
        if np.any(counts == 0):
            raise ValueError("every sequence needs at least one loss position")
        logp = log_softmax(logits)
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        weights = loss_mask / counts[:, None] / denom
        loss = float(-(picked * weights).sum())
        dlogits = np.exp(logp)
        bi, li = np.nonzero(np.ones((B, L), dtype=bool))
        dlogits[bi, li, targets.reshape(-1)] -= 1.0
        dlogits *= weights[..., None]
        self.backward(cache, dlogits)
        return loss


def forward(model: DiffusionLM, canvas: Canvas) -> np.ndarray:
    """``(len(canvas), V)`` logits for every position of the canvas."""
    if len(canvas) > model.config.max_positions:
        raise ValueError(
            f"canvas length {len(canvas)} exceeds max_positions {model.config.max_positions}"
        )
    logits, _ = model.forward_batch(canvas.tokens[None, :])
    return logits[0]


class ScriptedOracle:
    """Test double whose softmax reproduces a given EoS probability schedule.

    ``eos_schedule[j]`` is the EoS probability at generation slot ``j``
    (canvas position ``prompt_len + j``).  The remaining mass is spread
    uniformly over ``filler_ids``.  Unmasked positions get a near one-hot row
    on their current token.
    """

    FLOOR = -1e4

    def __init__(self, vocab: Vocabulary, eos_schedule, filler_ids=None):
        self.vocab = vocab
        self.eos_schedule = np.asarray(eos_schedule, dtype=np.float64)
        if np.any((self.eos_schedule < 0) | (self.eos_schedule > 1)):
            raise ValueError("EoS probabilities must lie in [0, 1]")
        if filler_ids is None:
            filler_ids = vocab.word_ids[:4]
        self.filler_ids = np.asarray(filler_ids, dtype=np.int64)
        if vocab.eos_id in self.filler_ids or vocab.mask_id in self.filler_ids:
            raise ValueError("filler ids cannot include eos or mask")

    def logits(self, canvas: Canvas) -> np.ndarray:
        n = len(canvas)
        L_p = canvas.prompt_len
        if n - L_p > len(self.eos_schedule):
            raise ValueError("canvas has more generation slots than the scripted schedule")
        out = np.full((n, self.vocab.size), self.FLOOR)
        with np.errstate(divide="ignore"):
            for i in range(n):
                if not canvas.masked[i]:
                    out[i, canvas.tokens[i]] = 0.0
                    continue
                phi = self.eos_schedule[i - L_p]
                if phi > 0:
                    out[i, self.vocab.eos_id] = math.log(phi)
                if phi < 1:
                    out[i, self.filler_ids] = math.log((1.0 - phi) / len(self.filler_ids))
        return out


# ---------------------------------------------------------------------------
# training


def make_training_example(answer, prompt, l_new: int, rng, vocab: Vocabulary, mask_ratio=None):
    """Build one corrupted training canvas.

    Targets are ``prompt + answer`` followed by EoS up to ``len(prompt) + l_new``.
    A mask ratio ``t`` is drawn from U(0, 1) (or fixed by ``mask_ratio``) and
    each generation slot is masked independently with probability ``t``.
    Draws that mask nothing are redrawn.

    Returns ``(canvas, targets, loss_mask)``; ``loss_mask`` equals
    ``canvas.masked``.
    """
    answer = np.asarray(answer, dtype=np.int64)
    prompt = np.asarray(prompt, dtype=np.int64)
    if len(answer) > l_new:
        raise ValueError(f"answer of length {len(answer)} does not fit in {l_new} slots")
    if len(prompt) == 0:
        raise ValueError("prompt must be nonempty")
    if mask_ratio is not None and not 0 < mask_ratio <= 1:
        raise ValueError("mask_ratio must lie in (0, 1]")
    L_p = len(prompt)
    targets = np.concatenate(
        [prompt, answer, np.full(l_new - len(answer), vocab.eos_id, dtype=np.int64)]
    )
    while True:
        t = rng.uniform() if mask_ratio is None else mask_ratio
        slot_mask = rng.uniform(size=l_new) < t
        if slot_mask.any():
            break
    masked = np.concatenate([np.zeros(L_p, dtype=bool), slot_mask])
    tokens = np.where(masked, vocab.mask_id, targets)
    canvas = Canvas(tokens, masked, L_p)
    return canvas, targets, masked.copy()


def _as_pair(item):
    if hasattr(item, "prompt") and hasattr(item, "reference"):
        return item.prompt, item.reference
    return item


def train(model: DiffusionLM, corpus, cfg: TrainingConfig, callback=None) -> list[float]:
    """Adam training on masked cross-entropy; returns the per-step loss history.

    ``corpus`` holds task instances or ``(prompt, answer)`` pairs.  Each batch
    is grouped by canvas length and gradients are accumulated across groups.
    """
    pairs = [tuple(np.asarray(x, dtype=np.int64) for x in _as_pair(item)) for item in corpus]
    if not pairs:
        raise ValueError("corpus is empty")
    longest = max(len(a) for _, a in pairs)
    if longest > cfg.l_new:
        raise ValueError(f"answers up to {longest} tokens do not fit in l_new={cfg.l_new}")
    rng = np.random.default_rng(cfg.seed)
    vocab = model.vocab
    history: list[float] = []
    step = 0
    total_steps = cfg.epochs * math.ceil(len(pairs) / cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[j] for j in order[start:start + cfg.batch_size]]
            tight = cfg.length_jitter and rng.random() < cfg.tight_fraction
            if cfg.length_jitter and not tight:
                lo = min(max(len(a) for _, a in batch) + 1, cfg.l_new)
                l_new = int(rng.integers(lo, cfg.l_new + 1))
            else:
                l_new = cfg.l_new
            groups: dict[int, list] = {}
            for prompt, answer in batch:
                if tight:
                    slack = int(rng.integers(0, cfg.tight_slack + 1))
                    l_new = min(len(answer) + 1 + slack, cfg.l_new)
                ex = make_training_example(answer, prompt, l_new, rng, vocab)
                groups.setdefault(len(ex[0]), []).append(ex)
            model.store.zero_grad()
            loss = 0.0
            for length in sorted(groups):
                exs = groups[length]
                toks = np.stack([c.tokens for c, _, _ in exs])
                tgts = np.stack([t for _, t, _ in exs])
                msk = np.stack([m for _, _, m in exs])
                logits, cache = model.forward_batch(toks, keep_cache=True)
                loss += model._masked_loss_backward(logits, cache, tgts, msk, len(batch))
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
            optimizer_step(model.store, cfg.optimizer, cfg.learning_rate(step, total_steps))
            history.append(loss)
            step += 1
            if cfg.log_every and step % cfg.log_every == 0:
                recent = history[-cfg.log_every:]
                logger.info("epoch %d step %d loss %.4f", epoch, step, sum(recent) / len(recent))
            if callback is not None:
                callback(step, loss)
    return history


def masked_eval_loss(model: DiffusionLM, corpus, l_new: int, seed: int = 0) -> float:
    """Average masked cross-entropy on ``corpus`` without touching gradients."""
    rng = np.random.default_rng(seed)
    total = 0.0
    pairs = [_as_pair(item) for item in corpus]
    for prompt, answer in pairs:
        canvas, targets, mask = make_training_example(answer, prompt, l_new, rng, model.vocab)
        logp = log_softmax(forward(model, canvas))
        total += -logp[mask, targets[mask]].mean()
    return total / len(pairs)


# ---------------------------------------------------------------------------
# weight files
#
# layout (little-endian):
#   8s   magic  b"SCDLMW\0\0"
#   u32  format version
#   u32  d_model, n_layers, n_heads, max_positions, vocab size, mask_id, eos_id
#   u32  byte length of the vocabulary JSON, then that many UTF-8 bytes
#   u64  number of float64 values that follow
#   f8[] parameters, flattened row-major, in declaration order


def save_weights(model: DiffusionLM, path) -> None:
    cfg = model.config
    vocab_json = json.dumps(list(model.vocab.tokens)).encode("utf-8")
    flat = np.concatenate([p.reshape(-1) for p in model.store.params.values()])
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack(
            "<8I", WEIGHT_VERSION, cfg.d_model, cfg.n_layers, cfg.n_heads,
            cfg.max_positions, model.vocab.size, model.vocab.mask_id, model.vocab.eos_id,
        ))
        fh.write(struct.pack("<I", len(vocab_json)))
        fh.write(vocab_json)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.astype("<f8").tobytes())


def load_weights(path, expected: ModelConfig | None = None) -> DiffusionLM:
    """Read a weight file.  ``expected`` rejects files with a different config."""
    data = Path(path).read_bytes()
    if data[:8] != WEIGHT_MAGIC:
        raise ValueError(f"{path}: not a weight file (bad magic)")
    off = 8
    version, d_model, n_layers, n_heads, max_pos, V, mask_id, eos_id = struct.unpack_from("<8I", data, off)
    off += 32
    if version != WEIGHT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    (nv,) = struct.unpack_from("<I", data, off)
    off += 4
    tokens = tuple(json.loads(data[off:off + nv].decode("utf-8")))
    off += nv
    vocab = Vocabulary(tokens)
    if vocab.size != V or vocab.mask_id != mask_id or vocab.eos_id != eos_id:
        raise ValueError(f"{path}: vocabulary header is inconsistent")
    cfg = ModelConfig(vocab=vocab, d_model=d_model, n_layers=n_layers, n_heads=n_heads,
                      max_positions=max_pos)
    if expected is not None:
        for name in ("d_model", "n_layers", "n_heads", "max_positions"):
            if getattr(expected, name) != getattr(cfg, name):
                raise ValueError(f"{path}: {name} mismatch ({getattr(cfg, name)} in file)")
        if expected.vocab.tokens != vocab.tokens:
            raise ValueError(f"{path}: vocabulary mismatch (V={V} in file, expected {expected.vocab.size})")
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    model = DiffusionLM(cfg)
    if count != model.num_parameters() or len(data) - off != 8 * count:
        raise ValueError(f"{path}: parameter block does not match the header config")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=off)
    pos = 0
    for p in model.store.params.values():
        p[...] = flat[pos:pos + p.size].reshape(p.shape)
        pos += p.size
    return model
