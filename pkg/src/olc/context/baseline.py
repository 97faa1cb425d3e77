"""Non-learned adaptive frequency model.

Lets the codec run without any trained weights.  Encoder and decoder each own
an instance and call :meth:`update` after every symbol, so both sides see the
same counts at every step.
"""

from __future__ import annotations

from typing import Hashable

import numpy as np

from olc.entropy import PROB_ONE


def apportion_counts(counts: np.ndarray) -> np.ndarray:
    """Largest-remainder quantization of ``counts / counts.sum()``, exact.

    Same rule as :func:`olc.entropy.quantize_probs` (floor of 1 per symbol,
    largest remainders first, lower index wins ties) but in integer
    arithmetic, so it is bit-identical on every platform.
    """
    c = np.asarray(counts, dtype=np.int64)
    k = len(c)
    total = int(c.sum())
    budget = PROB_ONE - k
    scaled = c * budget
    base = scaled // total
    rem = scaled - base * total
    w = base + 1
    leftover = budget - int(base.sum())
    if leftover:
        w[np.argsort(-rem, kind="stable")[:leftover]] += 1
    return w


def apportion_binary(c0: int, c1: int) -> int:
    """Weight of symbol 0 for a two-symbol count pair (see apportion_counts)."""
    total = c0 + c1
    budget = PROB_ONE - 2
    f0, r0 = divmod(c0 * budget, total)
    f1, r1 = divmod(c1 * budget, total)
    w0 = f0 + 1
    if budget - f0 - f1 and r0 >= r1:
        w0 += 1
    return w0


class AdaptiveFrequencyModel:
    """Laplace-smoothed (+1) symbol counts per context key."""

    def __init__(self, K: int):
        if K < 2:
            raise ValueError("K must be >= 2")
        self.K = K
        self._counts: dict[Hashable, np.ndarray] = {}

    def counts(self, context: Hashable) -> np.ndarray:
        c = self._counts.get(context)
        if c is None:
            c = np.ones(self.K, dtype=np.int64)
            self._counts[context] = c
        return c

    def probabilities(self, context: Hashable) -> np.ndarray:
        c = self.counts(context)
        return c / c.sum()

    def weights(self, context: Hashable) -> np.ndarray:
        return apportion_counts(self.counts(context))

    def update(self, context: Hashable, symbol: int) -> None:
        self.counts(context)[symbol] += 1


def adaptive_baseline(model: AdaptiveFrequencyModel, context: Hashable) -> np.ndarray:
    """Probability row for ``context`` under the current counts."""
    return model.probabilities(context)


def nonleaf_key(level: int, octant: int, parent_occupancy: int) -> tuple[int, int, int]:
    return (level, octant, parent_occupancy)


def leafbit_key(bit: int, known_prefix: int) -> tuple[int, int]:
    return (bit, known_prefix)
