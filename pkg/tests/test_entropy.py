from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from olc.context.baseline import apportion_binary, apportion_counts
from olc.entropy import (
    PROB_ONE,
    Bitpayload,
    ProbabilityTable,
    RangeDecoder,
    SymbolStream,
    cross_entropy_bits,
    decode,
    encode,
    quantize_probs,
    quantize_probs_batch,
)
from olc.errors import CorruptionError


def hamilton(p):
    """Exact largest-remainder apportionment with a floor of one, via Fractions."""
    k = len(p)
    total = sum(p)
    budget = PROB_ONE - k
    quotas = [x / total * budget for x in p]
    base = [int(q) for q in quotas]
    left = budget - sum(base)
    order = sorted(range(k), key=lambda i: (-(quotas[i] - base[i]), i))
    w = [b + 1 for b in base]
    for i in order[:left]:
        w[i] += 1
    return w


def random_tables(rng, n, k):
    p = rng.dirichlet(np.full(k, 0.3), size=n)
    return [ProbabilityTable(w) for w in quantize_probs_batch(p)], p


def test_uniform_binary():
    assert list(quantize_probs([0.5, 0.5]).weights) == [32768, 32768]


def test_floor_of_one():
    assert list(quantize_probs([1.0, 0.0]).weights) == [65535, 1]


def test_apportionment_error_k255(rng):
    for _ in range(20):
        p = rng.dirichlet(np.ones(255))
        w = quantize_probs(p).weights
        assert w.sum() == PROB_ONE and w.min() >= 1
        assert np.max(np.abs(w / PROB_ONE - p)) <= 255 / PROB_ONE


def test_matches_exact_hamilton_oracle(rng):
    for k in (2, 3, 8, 255):
        for _ in range(30):
            counts = rng.integers(1, 1000, k)
            fr = [Fraction(int(c)) for c in counts]
            assert list(apportion_counts(counts)) == hamilton(fr)
            # the float path agrees unless two remainders are within rounding noise
            p = counts / counts.sum()
            quotas = p * (PROB_ONE - k)
            rem = np.sort(quotas - np.floor(quotas))
            if np.min(np.diff(rem), initial=1) > 1e-9:
                assert list(quantize_probs(p).weights) == hamilton(fr)


def test_apportion_binary_matches_counts(rng):
    for _ in range(500):
        c0, c1 = (int(v) for v in rng.integers(1, 10_000, 2))
        assert apportion_binary(c0, c1) == apportion_counts([c0, c1])[0]


def test_quantize_rejects_bad_input():
    with pytest.raises(ValueError):
        quantize_probs([1.2, -0.2])
    with pytest.raises(ValueError):
        quantize_probs([0.5, 0.6])
    with pytest.raises(ValueError):
        ProbabilityTable(np.array([65536, 0]))


def test_empty_sequence():
    pl = encode([], [])
    assert pl.symbol_count == 0 and len(pl.data) <= 8
    assert decode(pl, []) == []


def test_uniform_bits_size(rng):
    sym = rng.integers(0, 2, 1000)
    t = quantize_probs([0.5, 0.5])
    pl = encode(sym, [t] * 1000)
    assert 125 <= len(pl.data) <= 135
    assert decode(pl, [t] * 1000) == list(sym)


def test_skewed_constant_stream():
    t = ProbabilityTable(np.array([65535, 1]))
    pl = encode([0] * 1000, [t] * 1000)
    assert len(pl.data) <= 12
    assert decode(pl, [t] * 1000) == [0] * 1000


@given(st.integers(0, 2**32 - 1), st.integers(2, 300), st.integers(1, 400))
def test_roundtrip_and_bound(seed, k, n):
    rng = np.random.default_rng(seed)
    tables, p = random_tables(rng, n, k)
    sym = [int(rng.choice(k, p=row)) for row in p]
    pl = encode(sym, tables)
    assert decode(pl, tables) == sym
    ce = cross_entropy_bits(sym, tables)
    assert len(pl.data) <= ce / 8 + 16
    assert 8 * len(pl.data) <= ce + 0.01 * n + 64


def test_symbol_out_of_range():
    with pytest.raises(ValueError):
        encode([2], [quantize_probs([0.5, 0.5])])


def test_autoregressive_callback(rng):
    # table for the next symbol depends on the previous symbol
    tabs = [quantize_probs(np.eye(4)[i] * 0.7 + 0.075) for i in range(4)]
    sym = [0]
    for _ in range(300):
        sym.append(int(rng.choice(4, p=tabs[sym[-1]].weights / PROB_ONE)))
    tables = [tabs[0]] + [tabs[s] for s in sym[:-1]]
    pl = encode(sym, tables)
    got = decode(pl, lambda prefix: tabs[prefix[-1]] if prefix else tabs[0])
    assert got == sym


def test_wrong_table_changes_output(rng):
    tables, p = random_tables(rng, 400, 16)
    sym = [int(rng.choice(16, p=row)) for row in p]
    pl = encode(sym, tables)
    # shift the coded symbol's own interval in the first table
    w = tables[0].weights.copy()
    j = sym[0]
    give = min(300, int(w[j]) - 1)
    w[j] -= give
    w[(j + 1) % 16] += give
    assert give > 0
    bad = [ProbabilityTable(w)] + tables[1:]
    try:
        assert decode(pl, bad) != sym
    except CorruptionError:
        pass


def test_truncated_payload_raises(rng):
    t = quantize_probs([0.5, 0.5])
    sym = list(rng.integers(0, 2, 500))
    pl = encode(sym, [t] * 500)
    with pytest.raises(CorruptionError):
        decode(Bitpayload(pl.data[: len(pl.data) // 2], 500), [t] * 500)


def test_decoder_consumes_exactly_payload(rng):
    tables, p = random_tables(rng, 2000, 5)
    sym = [int(rng.choice(5, p=row)) for row in p]
    pl = encode(sym, tables)
    dec = RangeDecoder(pl.data)
    for t in tables:
        dec.decode_symbol(t.cumulative)
    assert dec.pos == len(pl.data)


def test_determinism(rng):
    tables, p = random_tables(rng, 500, 7)
    sym = [int(rng.choice(7, p=row)) for row in p]
    assert encode(sym, tables).data == encode(sym, tables).data


def test_symbol_stream_paths_agree(rng):
    # code / code_one / code_binary produce one interchangeable stream
    w2 = quantize_probs_batch(rng.dirichlet(np.ones(2), size=50))
    w9 = quantize_probs_batch(rng.dirichlet(np.ones(9), size=50))
    s2 = rng.integers(0, 2, 50)
    s9 = rng.integers(0, 9, 50)
    enc_trace, dec_trace = [], []
    enc = SymbolStream(trace=enc_trace)
    enc.code(w9, s9)
    for w, s in zip(w2, s2):
        enc.code_binary(int(w[0]), int(s))
    for w, s in zip(w9, s9):
        enc.code_one(w, int(s))
    pl = enc.finish()
    ref = encode(list(s9) + list(s2) + list(s9), [ProbabilityTable(w) for w in list(w9) + list(w2) + list(w9)])
    assert pl.data == ref.data
    dec = SymbolStream(pl.data, trace=dec_trace)
    assert list(dec.code(w9)) == list(s9)
    assert [dec.code_binary(int(w[0])) for w in w2] == list(s2)
    assert [dec.code_one(w) for w in w9] == list(s9)
    assert len(enc_trace) == len(dec_trace)
    assert all(np.array_equal(a, b) for a, b in zip(enc_trace, dec_trace))
