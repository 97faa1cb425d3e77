"""Sample generation and training loop for the three context-model heads."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from olc.context.features import (
    NO_QUERY,
    ContextWindow,
    bits_state,
    level_features,
    make_window,
    nonleaf_schedule,
    window_chunks,
)
from olc.context.model import HEADS, ContextModel, windows_to_tensors
from olc.errors import TrainingError
from olc.octree import Octree

log = logging.getLogger(__name__)

DEFAULT_BIT_ORDER = tuple(range(8))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def bce_loss(logits: Sequence[float], targets: Sequence[int], s: int | None = None) -> float:
    """Mean binary cross entropy over the ``8 - s`` predicted leaf bits.

    ``-[y log sigmoid(b) + (1 - y) log(1 - sigmoid(b))]`` averaged over bits,
    evaluated through softplus so large logits do not overflow.
    """
    b = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    n = len(b)
    if s is not None and n != 8 - s:
        raise ValueError(f"expected {8 - s} logits for s={s}, got {n}")
    if n == 0:
        raise ValueError("no lossy bits (s = 8): loss undefined")
    if n > 8 or y.shape != b.shape:
        raise ValueError("logits and targets must have matching length <= 8")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("targets must be binary")
    return float(np.mean(y * _softplus(-b) + (1 - y) * _softplus(b)))


def bce_loss_grad(logits: Sequence[float], targets: Sequence[int]) -> np.ndarray:
    b = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if len(b) == 0:
        raise ValueError("no lossy bits (s = 8): gradient undefined")
    return (1.0 / (1.0 + np.exp(-b)) - y) / len(b)


def masked_bce(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-node mean BCE over masked bits, averaged over nodes with any bit.

    logits/targets/mask: (..., 8).  Torch twin of :func:`bce_loss`.
    """
    per_bit = targets * F.softplus(-logits) + (1 - targets) * F.softplus(logits)
    m = mask.to(logits.dtype)
    nbits = m.sum(dim=-1)
    node = (per_bit * m).sum(dim=-1) / nbits.clamp(min=1)
    valid = nbits > 0
    return node[valid].mean() if bool(valid.any()) else logits.sum() * 0


@dataclass
class Sample:
    window: ContextWindow
    target: np.ndarray  # (cap,) class index, or (cap, 8) bits for leafpredict
    mask: np.ndarray  # (cap,) or (cap, 8) bool


def nonleaf_samples(tree: Octree, D: int, capacity: int, checkerboard: bool = True) -> list[Sample]:
    out = []
    for level in range(tree.depth - 1):
        feats = level_features(tree, level, D)
        for order, split in nonleaf_schedule(tree.codes[level], capacity, checkerboard):
            truth = feats.true_occ[order]
            passes = [(0, split)] + ([(split, len(order))] if split < len(order) else [])
            for lo, hi in passes:
                w = make_window(feats, order, capacity)
                w.occ[:lo, D] = truth[:lo]
                target = np.zeros(capacity, dtype=np.int64)
                target[: len(order)] = truth - 1
                mask = np.zeros(capacity, dtype=bool)
                mask[lo:hi] = True
                out.append(Sample(w, target, mask))
    return out


def leaf_windows(tree: Octree, D: int, capacity: int):
    leaf = tree.depth - 1
    feats = level_features(tree, leaf, D)
    return feats, window_chunks(len(feats), capacity)


def known_mask(n: int, bit_order: Sequence[int], steps: int) -> np.ndarray:
    m = np.zeros((n, 8), dtype=bool)
    m[:, list(bit_order[:steps])] = True
    return m


def leafbit_samples(tree: Octree, D: int, capacity: int, bit_order=DEFAULT_BIT_ORDER, steps: Iterable[int] = range(8)) -> list[Sample]:
    feats, chunks = leaf_windows(tree, D, capacity)
    out = []
    for chunk in chunks:
        occ = feats.true_occ[chunk]
        bits = np.unpackbits(occ.astype(np.uint8)[:, None], axis=1, bitorder="little").astype(np.int64)
        for t in steps:
            w = make_window(feats, chunk, capacity)
            w.bits[: len(chunk)] = bits_state(occ, known_mask(len(chunk), bit_order, t))
            w.query[: len(chunk)] = bit_order[t]
            target = np.zeros(capacity, dtype=np.int64)
            target[: len(chunk)] = bits[:, bit_order[t]]
            mask = np.zeros(capacity, dtype=bool)
            mask[: len(chunk)] = True
            out.append(Sample(w, target, mask))
    return out


def leafpredict_samples(tree: Octree, D: int, capacity: int, bit_order=DEFAULT_BIT_ORDER, steps: Iterable[int] = range(8)) -> list[Sample]:
    feats, chunks = leaf_windows(tree, D, capacity)
    out = []
    for chunk in chunks:
        occ = feats.true_occ[chunk]
        bits = np.unpackbits(occ.astype(np.uint8)[:, None], axis=1, bitorder="little").astype(np.int64)
        for s in steps:
            if not 0 <= s < 8:
                raise ValueError("predictor steps must lie in [0, 8)")
            known = known_mask(len(chunk), bit_order, s)
            w = make_window(feats, chunk, capacity)
            w.bits[: len(chunk)] = bits_state(occ, known)
            w.query[:] = NO_QUERY
            target = np.zeros((capacity, 8), dtype=np.int64)
            target[: len(chunk)] = bits
            mask = np.zeros((capacity, 8), dtype=bool)
            mask[: len(chunk)] = ~known
            out.append(Sample(w, target, mask))
    return out


def make_samples(trees: Sequence[Octree], head: str, model: ContextModel, window: int | None = None, **kw) -> list[Sample]:
    cap = window or model.config.window
    D = model.config.D
    fn = {"nonleaf": nonleaf_samples, "leafbit": leafbit_samples, "leafpredict": leafpredict_samples}[head]
    out = []
    for tree in trees:
        if head == "nonleaf" and tree.depth < 2:
            continue
        out.extend(fn(tree, D, cap, **kw))
    return out


def batch_loss(model: ContextModel, samples: Sequence[Sample], head: str) -> torch.Tensor:
    t = windows_to_tensors([s.window for s in samples])
    logits = model.logits(*t, head=head)
    target = torch.from_numpy(np.stack([s.target for s in samples]))
    mask = torch.from_numpy(np.stack([s.mask for s in samples]))
    if head == "leafpredict":
        return masked_bce(logits, target.to(logits.dtype), mask)
    return F.cross_entropy(logits[mask], target[mask])


def train_steps(model: ContextModel, samples: Sequence[Sample], head: str, lr: float, steps: int) -> list[float]:
    """Repeat one batch ``steps`` times; returns the loss before each update."""
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    model.train()
    try:
        for _ in range(steps):
            opt.zero_grad()
            loss = batch_loss(model, samples, head)
            _check_finite(loss, head, len(losses))
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
    finally:
        model.eval()
    return losses


def _check_finite(loss: torch.Tensor, head: str, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss ({float(loss.detach())}) for head {head!r} at step {step}")


def train(
    weights: ContextModel,
    dataset: Sequence[Octree],
    head: str,
    lr: float = 2e-4,
    epochs: int = 10,
    window: int | None = None,
    batch_size: int = 8,
    seed: int = 0,
    history: list[float] | None = None,
    **sample_kw,
) -> ContextModel:
    """Train one head (and the shared backbone) in place; returns the model.

    The mean loss of each epoch is logged and appended to ``history``.
    """
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    if not dataset:
        raise ValueError("training dataset is empty")
    samples = make_samples(dataset, head, weights, window, **sample_kw)
    if not samples:
        raise ValueError(f"dataset yields no samples for head {head!r}")
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(weights.parameters(), lr=lr)
    weights.train()
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(samples))
            total, count = 0.0, 0
            for i in range(0, len(order), batch_size):
                batch = [samples[j] for j in order[i : i + batch_size]]
                opt.zero_grad()
                loss = batch_loss(weights, batch, head)
                _check_finite(loss, head, epoch)
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(batch)
                count += len(batch)
            mean = total / count
            log.info("head=%s epoch=%d mean_loss=%.6f", head, epoch, mean)
            if history is not None:
                history.append(mean)
    finally:
        weights.eval()
    if head not in weights.config.trained_heads:
        weights.config.trained_heads.append(head)
    return weights
