"""Token vocabulary for the synthetic tasks."""

from __future__ import annotations

from dataclasses import dataclass, field

MASK = "<mask>"
EOS = "<eos>"
SEP = "<sep>"
PLUS = "+"
EQUALS = "="
PERIOD = "."
COPY = "<copy>"
ADD = "<add>"
QA = "<qa>"
SPECIALS = (MASK, EOS, SEP, PLUS, EQUALS, PERIOD, COPY, ADD, QA)
DIGITS = tuple(str(d) for d in range(10))


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token list; a token's id is its index."""

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        for tok in (MASK, EOS):
            if tok not in self.tokens:
                raise ValueError(f"vocabulary is missing {tok}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def standard(cls, size: int = 64) -> "Vocabulary":
        """Specials, the ten digits, then ``w00``, ``w01``... up to ``size``."""
        base = SPECIALS + DIGITS
        if size < len(base) + 4:
            raise ValueError(f"vocabulary size must be at least {len(base) + 4}")
        words = tuple(f"w{i:02d}" for i in range(size - len(base)))
        return cls(base + words)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def mask_id(self) -> int:
        return self._index[MASK]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def word_ids(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t.startswith("w") and t[1:].isdigit()]

    def id(self, token: str) -> int:
        return self._index[token]

    def encode(self, tokens) -> list[int]:
        if isinstance(tokens, str):
            tokens = tokens.split()
        return [self._index[t] for t in tokens]

    def decode(self, ids) -> str:
        return " ".join(self.tokens[int(i)] for i in ids)

    def digits(self, n: int) -> list[int]:
        """Digit token ids of a nonnegative integer."""
        return [self._index[c] for c in str(int(n))]
