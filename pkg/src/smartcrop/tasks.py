"""Synthetic benchmarks with answers known by construction, plus metrics.

Three generators stand in for the length regimes of real benchmarks:

* ``copyk``: repeat a payload word k times (long canvas, short answers)
* ``arith``: digit-token addition (short structured answers)
* ``verbose_qa``: templated multi-sentence answers scored with ROUGE-1
  under a step budget smaller than the canvas

Metrics operate on token ids.  ROUGE-1 here is therefore token-level over the
engine vocabulary, and like any unigram F1 it rewards outputs whose length
matches the reference.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .vocab import ADD, COPY, PERIOD, PLUS, QA, SEP, EQUALS, Vocabulary


@dataclass
class Instance:
    id: str
    prompt: list[int]
    reference: list[int]
    true_length: int | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "prompt": list(map(int, self.prompt)),
                "reference": list(map(int, self.reference)),
                "true_length": self.true_length,
                "metadata": self.metadata,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "Instance":
        d = json.loads(line)
        return cls(d["id"], d["prompt"], d["reference"], d.get("true_length"), d.get("metadata", {}))


@dataclass(frozen=True)
class TaskSpec:
    name: str
    l_new: int
    steps: int
    metric: str  # "exact-match" | "rouge-1"
    generator: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.l_new < 1 or self.steps < 1:
            raise ValueError("presets must be positive")
        if self.metric not in ("exact-match", "rouge-1"):
            raise ValueError(f"unknown metric {self.metric!r}")

    def generate(self, vocab: Vocabulary, seed: int, n: int) -> list[Instance]:
        return GENERATORS[self.generator](vocab, seed, n, **self.params)

    def score(self, generated, reference) -> float:
        if self.metric == "exact-match":
            return float(exact_match(generated, reference))
        return rouge1(generated, reference)


def _copyk_prompt(vocab: Vocabulary, payload: int, k: int) -> list[int]:
    tens, ones = divmod(k, 10)
    return [vocab.id(COPY), payload, vocab.id(str(tens)), vocab.id(str(ones)), vocab.id(SEP)]


def copyk_instance(vocab: Vocabulary, payload: int, k: int, id: str = "copyk") -> Instance:
    if not 1 <= k <= 99:
        raise ValueError("k must be in 1..99")
    return Instance(id, _copyk_prompt(vocab, payload, k), [payload] * k, k,
                    {"task": "copyk", "k": k})


def gen_copyk(vocab: Vocabulary, seed: int, n: int, k_range=(1, 40)) -> list[Instance]:
    """Prompt ``<copy> w k_tens k_ones <sep>``; answer ``w`` repeated ``k`` times."""
    lo, hi = k_range
    if not 1 <= lo <= hi <= 99:
        raise ValueError("k_range must lie within 1..99")
    rng = np.random.default_rng(seed)
    words = vocab.word_ids
    out = []
    for i in range(n):
        payload = int(words[rng.integers(len(words))])
        k = int(rng.integers(lo, hi + 1))
        out.append(copyk_instance(vocab, payload, k, id=f"copyk-{seed}-{i}"))
    return out


def arith_instance(vocab: Vocabulary, a: int, b: int, id: str = "arith") -> Instance:
    prompt = [vocab.id(ADD)] + vocab.digits(a) + [vocab.id(PLUS)] + vocab.digits(b) + [vocab.id(EQUALS)]
    ref = vocab.digits(a + b)
    return Instance(id, prompt, ref, len(ref), {"task": "arith", "a": a, "b": b})


def gen_arith(vocab: Vocabulary, seed: int, n: int, digit_range=(1, 2)) -> list[Instance]:
    """``a + b =`` with operands of ``digit_range`` digits; answer is the sum's digits."""
    lo, hi = digit_range
    if not 1 <= lo <= hi <= 6:
        raise ValueError("digit_range must lie within 1..6")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        operands = []
        for _ in range(2):
            nd = int(rng.integers(lo, hi + 1))
            low = 0 if nd == 1 else 10 ** (nd - 1)
            operands.append(int(rng.integers(low, 10**nd)))
        out.append(arith_instance(vocab, *operands, id=f"arith-{seed}-{i}"))
    return out


def qa_answer(vocab: Vocabulary, topic: int, n_sentences: int) -> list[int]:
    """Each sentence is the topic word, the next 2-4 words cyclically, then a period."""
    words = vocab.word_ids
    pos = words.index(topic)
    body = 2 + pos % 3
    sentence = [topic] + [words[(pos + j) % len(words)] for j in range(1, body + 1)]
    sentence.append(vocab.id(PERIOD))
    return sentence * n_sentences


def gen_verbose_qa(vocab: Vocabulary, seed: int, n: int, sentence_range=(1, 8)) -> list[Instance]:
    """Prompt ``<qa> topic n <sep>``; answer is ``n`` templated sentences."""
    lo, hi = sentence_range
    if not 1 <= lo <= hi <= 9:
        raise ValueError("sentence_range must lie within 1..9")
    rng = np.random.default_rng(seed)
    words = vocab.word_ids
    out = []
    for i in range(n):
        topic = int(words[rng.integers(len(words))])
        ns = int(rng.integers(lo, hi + 1))
        ref = qa_answer(vocab, topic, ns)
        prompt = [vocab.id(QA), topic, vocab.id(str(ns)), vocab.id(SEP)]
        out.append(Instance(f"qa-{seed}-{i}", prompt, ref, len(ref),
                            {"task": "verbose-qa", "sentences": ns}))
    return out


GENERATORS = {
    "copyk": gen_copyk,
    "arith": gen_arith,
    "verbose-qa": gen_verbose_qa,
}

# Desk-scale presets: each keeps the canvas/step regime of one real benchmark.
PRESETS = {
    "copyk-long": TaskSpec("copyk-long", 160, 160, "exact-match", "copyk", {"k_range": (1, 40)}),
    "arith": TaskSpec("arith", 32, 32, "exact-match", "arith", {"digit_range": (1, 2)}),
    "verbose-qa": TaskSpec("verbose-qa", 64, 8, "rouge-1", "verbose-qa", {"sentence_range": (1, 8)}),
}

# preserve-steps when the step budget is below the canvas, preserve-density otherwise
DEFAULT_SCHEDULE_MODE = {
    name: ("preserve-steps" if spec.steps < spec.l_new else "preserve-density")
    for name, spec in PRESETS.items()
}


def get_preset(name: str) -> TaskSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown task preset {name!r}; choose from {sorted(PRESETS)}") from None


def exact_match(generated, reference) -> int:
    return int(list(map(int, generated)) == list(map(int, reference)))


def rouge1(generated, reference) -> float:
    """Unigram F1 with clipped counts.  Empty vs empty scores 1."""
    gen = Counter(map(int, generated))
    ref = Counter(map(int, reference))
    n_gen = sum(gen.values())
    n_ref = sum(ref.values())
    if n_gen == 0 and n_ref == 0:
        return 1.0
    if n_gen == 0 or n_ref == 0:
        return 0.0
    overlap = sum((gen & ref).values())
    if overlap == 0:
        return 0.0
    precision = overlap / n_gen
    recall = overlap / n_ref
    return 2 * precision * recall / (precision + recall)


def write_corpus(instances, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")


def read_corpus(path) -> list[Instance]:
    return [Instance.from_json(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
