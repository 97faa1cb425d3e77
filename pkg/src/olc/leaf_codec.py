"""Leaf-node lossy coding.

Each leaf's occupancy byte is split into its 8 child bits.  The first ``s``
bits (in ``bit_order``) are range-coded one bit-plane at a time: at step ``t``
every leaf's bit ``bit_order[t]`` is coded, conditioned on the ancestors and
on all bits from earlier steps.  The remaining ``8 - s`` bits are never sent;
the decoder fills them in from the predictor head, thresholded at 0.5.

A leaf whose bits all come out 0 would vanish from the tree, so the decoder
then sets the predicted bit with the highest probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from olc.context.baseline import apportion_binary, leafbit_key
from olc.context.features import NO_QUERY, bits_state, level_features, make_window, window_chunks
from olc.context.model import ContextModel
from olc.entropy import Bitpayload, SymbolStream, quantize_probs_batch
from olc.errors import CorruptionError
from olc.octree import Octree

DEFAULT_LEAF_WINDOW = 1024
DEFAULT_PREDICT_WINDOW = 2048


@dataclass(frozen=True)
class LeafCodingPlan:
    s: int = 8
    bit_order: tuple[int, ...] = field(default=tuple(range(8)))

    def __post_init__(self):
        if not 0 <= self.s <= 8:
            raise ValueError(f"leaf lossless steps must lie in [0, 8], got {self.s}")
        if sorted(self.bit_order) != list(range(8)):
            raise ValueError("bit_order must be a permutation of 0..7")

    @property
    def coded_bits(self) -> tuple[int, ...]:
        return tuple(self.bit_order[: self.s])

    @property
    def predicted_bits(self) -> tuple[int, ...]:
        return tuple(self.bit_order[self.s :])


def unpack_bits(occupancy: np.ndarray) -> np.ndarray:
    return np.unpackbits(np.asarray(occupancy, dtype=np.uint8)[:, None], axis=1, bitorder="little").astype(np.int64)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    return np.packbits(np.asarray(bits, dtype=np.uint8), axis=1, bitorder="little")[:, 0]


def _check_model(model) -> None:
    if model is not None and not isinstance(model, ContextModel):
        raise TypeError(f"expected a ContextModel or None for the baseline, got {type(model).__name__}")


def code_leaf_steps(
    stream: SymbolStream,
    tree: Octree,
    model: ContextModel | None,
    plan: LeafCodingPlan,
    truth: np.ndarray | None = None,
) -> np.ndarray:
    """Run the lossless bit-plane steps in either direction.

    Returns an (n_leaves, 8) array of bits with the coded positions filled
    (other positions 0).  ``truth`` must be given when encoding.
    """
    _check_model(model)
    leaf = tree.depth - 1
    n = tree.level_size(leaf)
    bits = np.zeros((n, 8), dtype=np.int64)
    true_bits = None if truth is None else unpack_bits(truth)
    known = np.zeros((n, 8), dtype=bool)
    if plan.s == 0:
        return bits

    if model is None:
        # adaptive binary counts per (bit, known prefix), kept as plain ints
        counts: dict[tuple[int, int], list[int]] = {}
        for t in range(plan.s):
            b = plan.bit_order[t]
            prefix = (bits * known).dot(1 << np.arange(8)).tolist()
            gt = None if true_bits is None else true_bits[:, b].tolist()
            col = []
            for i in range(n):
                c = counts.setdefault(leafbit_key(b, prefix[i]), [1, 1])
                sym = stream.code_binary(apportion_binary(c[0], c[1]), None if gt is None else gt[i])
                c[sym] += 1
                col.append(sym)
            bits[:, b] = col
            known[:, b] = True
        return bits

    cap = model.config.window
    feats = level_features(tree, leaf, model.config.D)
    chunks = window_chunks(n, cap)
    for t in range(plan.s):
        b = plan.bit_order[t]
        for chunk in chunks:
            w = make_window(feats, chunk, cap)
            w.bits[: len(chunk)] = bits_state(pack_bits(bits[chunk]), known[chunk])
            w.query[: len(chunk)] = b
            probs = model.predict([w], "leafbit")[0]
            weights = quantize_probs_batch(probs)
            bits[chunk, b] = stream.code(weights, None if true_bits is None else true_bits[chunk, b])
        known[:, b] = True
    return bits


def encode_leaf_lossless(
    tree: Octree,
    model: ContextModel | None,
    s: int,
    bit_order: Sequence[int] = tuple(range(8)),
    trace: list | None = None,
) -> Bitpayload:
    """Range-code the first ``s`` bit-planes of the leaf level."""
    plan = LeafCodingPlan(s, tuple(bit_order))
    if s == 0:
        return Bitpayload(b"", 0)
    stream = SymbolStream(trace=trace)
    code_leaf_steps(stream, tree, model, plan, truth=tree.occupancy[tree.depth - 1])
    return stream.finish()


def predict_leaf_bits(
    tree: Octree,
    model: ContextModel | None,
    plan: LeafCodingPlan,
    bits: np.ndarray,
    window: int | None = None,
) -> np.ndarray:
    """Probabilities (n, 8) for every child bit given the transmitted ones.

    Without a model every bit gets 0.5.
    """
    _check_model(model)
    n = len(bits)
    if model is None:
        return np.full((n, 8), 0.5)
    cap = window or model.config.window
    leaf = tree.depth - 1
    feats = level_features(tree, leaf, model.config.D)
    known = np.zeros((n, 8), dtype=bool)
    known[:, list(plan.coded_bits)] = True
    out = np.empty((n, 8))
    for chunk in window_chunks(n, cap):
        w = make_window(feats, chunk, cap)
        w.bits[: len(chunk)] = bits_state(pack_bits(bits[chunk]), known[chunk])
        w.query[:] = NO_QUERY
        out[chunk] = model.predict([w], "leafpredict")[0]
    return out


def fill_predicted(bits: np.ndarray, probs: np.ndarray, plan: LeafCodingPlan) -> np.ndarray:
    """Threshold predicted positions at 0.5 (ties to 0) and repair empty leaves."""
    bits = bits.copy()
    pred = list(plan.predicted_bits)
    if not pred:
        return bits
    bits[:, pred] = (probs[:, pred] > 0.5).astype(np.int64)
    empty = np.nonzero(bits.sum(axis=1) == 0)[0]
    if len(empty):
        # argmax picks the first maximum, i.e. earliest in bit_order on ties
        best = np.asarray(pred)[np.argmax(probs[np.ix_(empty, pred)], axis=1)]
        bits[empty, best] = 1
    return bits


def decode_leaf(
    payload: Bitpayload | bytes,
    tree: Octree,
    model_bit: ContextModel | None,
    model_predict: ContextModel | None,
    s: int,
    bit_order: Sequence[int] = tuple(range(8)),
    predict_window: int | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Recover leaf occupancies for ``tree``'s leaf level.

    Only the leaf node layout of ``tree`` is used; its leaf occupancies are
    ignored.
    """
    plan = LeafCodingPlan(s, tuple(bit_order))
    data = payload.data if isinstance(payload, Bitpayload) else payload
    n = tree.level_size(tree.depth - 1)
    if s > 0:
        stream = SymbolStream(data, trace=trace)
        bits = code_leaf_steps(stream, tree, model_bit, plan)
    else:
        if len(data):
            raise CorruptionError("leaf payload must be empty when s = 0")
        bits = np.zeros((n, 8), dtype=np.int64)
    if s < 8:
        probs = predict_leaf_bits(tree, model_predict, plan, bits, predict_window)
        bits = fill_predicted(bits, probs, plan)
    return pack_bits(bits)


def predicted_bit_accuracy(decoded: np.ndarray, truth: np.ndarray, plan: LeafCodingPlan) -> float:
    """Fraction of untransmitted bits the decoder got right."""
    pred = list(plan.predicted_bits)
    if not pred:
        return 1.0
    return float(np.mean(unpack_bits(decoded)[:, pred] == unpack_bits(truth)[:, pred]))


def rd_sweep(qc, models, s_values: Sequence[int], checkerboard: bool = True, k: int = 8) -> list[dict]:
    """Encode/decode ``qc`` at each ``s`` and measure rate and distortion.

    Distortion is measured on the integer grid of the coded depth, peak
    ``2**depth - 1``.  Rows come back sorted by ``s``.
    """
    from olc.codec import EncodeConfig, decode_quantized, encode_quantized
    from olc.metrics import chamfer, d1_psnr, d2_psnr

    peak = float((1 << qc.depth) - 1)
    ref = qc.coords.astype(np.float64)
    rows = []
    for s in sorted(set(s_values)):
        bs = encode_quantized(qc, EncodeConfig(steps=s, models=models, checkerboard=checkerboard))
        out = decode_quantized(bs.to_bytes(), models)
        test = out.coords.astype(np.float64)
        rows.append(
            {
                "s": s,
                "bpp": bs.bpp,
                "d1_psnr": d1_psnr(ref, test, peak),
                "d2_psnr": d2_psnr(ref, test, peak, k=k) if len(ref) > k else float("nan"),
                "chamfer": chamfer(ref, test),
            }
        )
    return rows
