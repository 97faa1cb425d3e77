"""Bit-exact range coder driven by externally supplied probability tables.

Probabilities are quantized to 16-bit integer weights before they reach the
coder, so floating-point noise in a model can never desynchronize encoder and
decoder.  The coder itself is integer-only: 32-bit low/range with the
carry-less renormalization of Subbotin's range coder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from olc.errors import CorruptionError

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = 0xFFFFFFFF


@dataclass(frozen=True, eq=False)
class ProbabilityTable:
    """K integer weights, each >= 1, summing to exactly 2**16."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.int64)
        if w.ndim != 1 or len(w) < 2:
            raise ValueError("a probability table needs K >= 2 weights")
        if w.min() < 1 or int(w.sum()) != PROB_ONE:
            raise ValueError("weights must be >= 1 and sum to 65536")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        cum = np.zeros(len(w) + 1, dtype=np.int64)
        np.cumsum(w, out=cum[1:])
        cum.setflags(write=False)
        object.__setattr__(self, "cumulative", cum)

    @property
    def K(self) -> int:
        return len(self.weights)

    def __eq__(self, other) -> bool:
        return isinstance(other, ProbabilityTable) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())


def quantize_probs_batch(p: np.ndarray) -> np.ndarray:
    """Row-wise largest-remainder apportionment of 65536 with a floor of 1.

    Each row is renormalized by its own sum first.  Ties in the remainder go
    to the lower symbol index.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError("expected an (n, K) array with K >= 2")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    n, k = p.shape
    sums = p.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValueError("probability row sums to zero")
    budget = PROB_ONE - k
    raw = p / sums * budget
    base = np.floor(raw)
    rem = raw - base
    w = base.astype(np.int64) + 1
    leftover = budget - (w - 1).sum(axis=1)
    # stable sort on -remainder: largest remainders first, lower index wins ties
    order = np.argsort(-rem, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(k)[None, :].repeat(n, axis=0), axis=1)
    pos = leftover[:, None]
    w += (rank < np.maximum(pos, 0)).astype(np.int64)
    if np.any(leftover < 0):
        # float rounding pushed the floors over budget; take back from the
        # smallest remainders among weights that can afford it
        for i in np.nonzero(leftover < 0)[0]:
            need = -int(leftover[i])
            for j in order[i][::-1]:
                if need == 0:
                    break
                if w[i, j] > 1:
                    w[i, j] -= 1
                    need -= 1
    return w


def quantize_probs(p: Sequence[float]) -> ProbabilityTable:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("expected a 1-D probability vector")
    if np.any(p < 0):
        raise ValueError("negative probability")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum()!r}, expected 1")
    return ProbabilityTable(quantize_probs_batch(p[None, :])[0])


@dataclass
class Bitpayload:
    data: bytes
    symbol_count: int

    def __len__(self) -> int:
        return len(self.data)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()
        self.count = 0

    def encode(self, cum: int, freq: int) -> None:
        r = self.range >> PROB_BITS
        low = self.low + cum * r
        rng = freq * r
        out = self.out
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            out.append(low >> 24)
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self.low = low
        self.range = rng
        self.count += 1

    def encode_symbol(self, symbol: int, table: ProbabilityTable) -> None:
        if not 0 <= symbol < table.K:
            raise ValueError(f"symbol {symbol} out of range for K={table.K}")
        cum = table.cumulative
        self.encode(int(cum[symbol]), int(cum[symbol + 1] - cum[symbol]))

    def finish(self) -> Bitpayload:
        low = self.low
        for _ in range(4):
            self.out.append(low >> 24)
            low = (low << 8) & _MASK
        return Bitpayload(bytes(self.out), self.count)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise CorruptionError("payload exhausted before all symbols were decoded")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_symbol(self, cumulative: np.ndarray) -> int:
        r = self.range >> PROB_BITS
        value = ((self.code - self.low) & _MASK) // r
        if value >= PROB_ONE:
            raise CorruptionError("code value outside the probability range")
        sym = int(np.searchsorted(cumulative, value, side="right")) - 1
        cum = int(cumulative[sym])
        self._advance(r, cum, int(cumulative[sym + 1]) - cum)
        return sym

    def decode_binary(self, w0: int) -> int:
        """Decode one symbol of the two-symbol table ``(w0, 65536 - w0)``."""
        r = self.range >> PROB_BITS
        value = ((self.code - self.low) & _MASK) // r
        if value >= PROB_ONE:
            raise CorruptionError("code value outside the probability range")
        if value < w0:
            self._advance(r, 0, w0)
            return 0
        self._advance(r, w0, PROB_ONE - w0)
        return 1

    def _advance(self, r: int, cum: int, freq: int) -> None:
        low = self.low + cum * r
        rng = freq * r
        code = self.code
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            code = ((code << 8) | self._byte()) & _MASK
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self.low, self.range, self.code = low, rng, code


def cumulative_batch(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.int64)
    cum = np.zeros((w.shape[0], w.shape[1] + 1), dtype=np.int64)
    np.cumsum(w, axis=1, out=cum[:, 1:])
    return cum


def encode(symbols: Sequence[int], tables: Sequence[ProbabilityTable]) -> Bitpayload:
    if len(symbols) != len(tables):
        raise ValueError("need exactly one table per symbol")
    enc = RangeEncoder()
    for s, t in zip(symbols, tables):
        enc.encode_symbol(int(s), t)
    return enc.finish()


def encode_weights(symbols: np.ndarray, weights: np.ndarray, enc: RangeEncoder | None = None) -> RangeEncoder:
    """Append symbols coded with an (n, K) integer weight matrix."""
    symbols = np.asarray(symbols, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    if len(symbols) != len(weights):
        raise ValueError("need exactly one weight row per symbol")
    if len(symbols) and (symbols.min() < 0 or symbols.max() >= weights.shape[1]):
        raise ValueError("symbol out of range")
    enc = enc or RangeEncoder()
    if len(symbols) == 0:
        return enc
    cum = cumulative_batch(weights)
    rows = np.arange(len(symbols))
    lo = cum[rows, symbols].tolist()
    fr = (cum[rows, symbols + 1] - cum[rows, symbols]).tolist()
    e = enc.encode
    for c, f in zip(lo, fr):
        e(c, f)
    return enc


def decode(
    payload: Bitpayload | bytes,
    tables: Iterable[ProbabilityTable] | Callable[[list[int]], ProbabilityTable],
    count: int | None = None,
) -> list[int]:
    """Decode symbols.

    ``tables`` is either a sequence (one table per symbol) or a callable that
    receives the already-decoded prefix and returns the next table, which is
    the auto-regressive contract.  ``count`` defaults to the payload's
    ``symbol_count``.
    """
    data = payload.data if isinstance(payload, Bitpayload) else payload
    if count is None:
        if isinstance(payload, Bitpayload):
            count = payload.symbol_count
        elif not callable(tables):
            tables = list(tables)
            count = len(tables)
        else:
            raise ValueError("count is required with a table callback and raw bytes")
    dec = RangeDecoder(data)
    out: list[int] = []
    it = None if callable(tables) else iter(tables)
    for _ in range(count):
        table = tables(out) if it is None else next(it)
        out.append(dec.decode_symbol(table.cumulative))
    return out


def cross_entropy_bits(symbols: Sequence[int], tables: Sequence[ProbabilityTable]) -> float:
    return float(sum(-np.log2(t.weights[s] / PROB_ONE) for s, t in zip(symbols, tables)))


class SymbolStream:
    """One direction-agnostic view over a range encoder or decoder.

    Traversal code calls :meth:`code` with the ground truth when encoding and
    ``None`` when decoding; it gets the symbols back either way, so a single
    code path drives both directions.  ``trace`` collects every weight row
    handed to the coder, for lockstep checks.
    """

    def __init__(self, data: bytes | None = None, trace: list | None = None):
        self.encoding = data is None
        self.enc = RangeEncoder() if self.encoding else None
        self.dec = None if self.encoding else RangeDecoder(data)
        self.trace = trace

    def code(self, weights: np.ndarray, truth: np.ndarray | None = None) -> np.ndarray:
        weights = np.asarray(weights, dtype=np.int64)
        if self.trace is not None:
            self.trace.append(weights.copy())
        if self.encoding:
            if truth is None:
                raise ValueError("encoder needs ground-truth symbols")
            truth = np.asarray(truth, dtype=np.int64)
            encode_weights(truth, weights, self.enc)
            return truth
        cum = cumulative_batch(weights)
        d = self.dec.decode_symbol
        return np.array([d(row) for row in cum], dtype=np.int64)

    def code_one(self, weights: np.ndarray, truth: int | None = None) -> int:
        weights = np.asarray(weights, dtype=np.int64)
        if self.trace is not None:
            self.trace.append(weights[None, :].copy())
        if self.encoding:
            if not 0 <= truth < len(weights):
                raise ValueError(f"symbol {truth} out of range for K={len(weights)}")
            cum = int(weights[:truth].sum())
            self.enc.encode(cum, int(weights[truth]))
            return truth
        cum = np.zeros(len(weights) + 1, dtype=np.int64)
        np.cumsum(weights, out=cum[1:])
        return self.dec.decode_symbol(cum)

    def code_binary(self, w0: int, truth: int | None = None) -> int:
        """Code a bit with weights ``(w0, 65536 - w0)``."""
        if self.trace is not None:
            self.trace.append(np.array([[w0, PROB_ONE - w0]], dtype=np.int64))
        if self.encoding:
            if truth:
                self.enc.encode(w0, PROB_ONE - w0)
                return 1
            self.enc.encode(0, w0)
            return 0
        return self.dec.decode_binary(w0)

    def finish(self) -> Bitpayload:
        if not self.encoding:
            raise RuntimeError("finish() is only valid on the encoding side")
        return self.enc.finish()
