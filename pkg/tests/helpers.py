"""Hand-built oracles shared by the test modules."""

import math

import numpy as np

from smartcrop.vocab import Vocabulary


class CopyOracle:
    """Solves copy-k prompts exactly, with a soft EoS ramp after the answer.

    At generation slot ``j`` the EoS probability is 0 for ``j < k`` and
    ``ramp[j - k]`` afterwards (1 beyond the ramp); the rest goes to the
    payload word.  Unmasked positions are echoed back.
    """

    def __init__(self, vocab: Vocabulary, ramp=(0.6, 0.9, 0.99), k_offset=0):
        self.vocab = vocab
        self.ramp = tuple(ramp)
        self.k_offset = k_offset
        self.calls = 0

    def logits(self, canvas):
        self.calls += 1
        v = self.vocab
        L_p = canvas.prompt_len
        payload = int(canvas.tokens[1])
        k = 10 * int(v.tokens[canvas.tokens[2]]) + int(v.tokens[canvas.tokens[3]]) + self.k_offset
        out = np.full((len(canvas), v.size), -1e4)
        for i in range(len(canvas)):
            if not canvas.masked[i]:
                out[i, canvas.tokens[i]] = 0.0
                continue
            j = i - L_p
            phi = 0.0 if j < k else (self.ramp[j - k] if j - k < len(self.ramp) else 1.0)
            if phi > 0:
                out[i, v.eos_id] = math.log(phi)
            if phi < 1:
                out[i, payload] = math.log(1 - phi)
        return out


class FlakyOracle:
    """Raises for instances whose payload is in ``bad_payloads``."""

    def __init__(self, inner, bad_payloads):
        self.inner = inner
        self.vocab = inner.vocab
        self.bad = set(bad_payloads)

    def logits(self, canvas):
        if int(canvas.tokens[1]) in self.bad:
            raise RuntimeError("injected failure")
        return self.inner.logits(canvas)
