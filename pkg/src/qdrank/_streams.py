"""Deterministic random streams derived from a root seed and string labels.

Every random decision in the package flows from one integer seed through a
named derivation, so results are reproducible regardless of execution order
or parallelism:

* ``derive_rng(seed, *labels)`` builds a numpy Generator for batch sampling
  (opponent lists, cohorts, synthetic corpora).
* ``CallStream(seed, labels)`` is a cheap counter-based source used once per
  judged call; it hashes (key, counter) with blake2b instead of spinning up
  a full Generator, which matters when tens of millions of calls are made.

Both derivations hash the same label encoding, so a stream is fully
identified by its labels.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_SEP = "\x1f"
_TWO64 = float(2**64)


def _label_bytes(seed: int, labels: tuple[object, ...]) -> bytes:
    return _SEP.join([str(seed), *(str(x) for x in labels)]).encode("utf-8")


def derive_seed(seed: int, *labels: object) -> int:
    """128-bit child seed uniquely determined by (seed, labels)."""
    digest = hashlib.blake2b(_label_bytes(seed, labels), digest_size=16).digest()
    return int.from_bytes(digest, "big")


def derive_rng(seed: int, *labels: object) -> np.random.Generator:
    """Independent numpy Generator for the named sub-stream."""
    return np.random.default_rng(derive_seed(seed, *labels))


class CallStream:
    """Counter-based uniform/normal source for a single judged call.

    Matches the zero-argument ``random()`` / ``normal()`` shape of
    ``np.random.Generator`` closely enough that either can back the
    simulated judge.
    """

    __slots__ = ("_key", "_counter")

    def __init__(self, seed: int, labels: tuple[object, ...]):
        self._key = _label_bytes(seed, labels)
        self._counter = 0

    def _uniform64(self) -> int:
        digest = hashlib.blake2b(
            self._key + b"|%d" % self._counter, digest_size=8
        ).digest()
        self._counter += 1
        return int.from_bytes(digest, "big")

    def random(self) -> float:
        """Uniform draw in [0, 1)."""
        return self._uniform64() / _TWO64

    def normal(self) -> float:
        """Standard normal draw via Box-Muller; never returns inf."""
        u1 = (self._uniform64() + 0.5) / _TWO64
        u2 = self._uniform64() / _TWO64
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
