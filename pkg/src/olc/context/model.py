"""Learned context model: stacked-feature embedding, causal transformer with
rotary position embedding, and three output heads.

Head sizes:
    nonleaf      255-way softmax over occupancy codes 1..255 (class k <-> code k+1)
    leafbit      2-way softmax for the leaf bit currently being coded
    leafpredict  8 independent logistic outputs, one per leaf child bit
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from olc.context.features import ContextWindow

HEADS = ("nonleaf", "leafbit", "leafpredict")
HEAD_SIZES = {"nonleaf": 255, "leafbit": 2, "leafpredict": 8}


@dataclass
class ModelConfig:
    d: int = 128
    layers: int = 4
    heads: int = 4
    D: int = 4
    max_level: int = 32
    window: int = 1024
    ff_mult: int = 4
    rope_base: float = 10000.0
    trained_heads: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError("d must be divisible by the number of attention heads")
        if (self.d // self.heads) % 2:
            raise ValueError("per-head width must be even for rotary embedding")
        bad = set(self.trained_heads) - set(HEADS)
        if bad:
            raise ValueError(f"unknown heads {sorted(bad)}")

    def to_dict(self) -> dict:
        return asdict(self)


def rope_rotate(embedding: np.ndarray, pos_index: int, base: float = 10000.0) -> np.ndarray:
    """Rotate pairs ``(e[2k], e[2k+1])`` by ``pos_index * base**(-2k/d)``."""
    e = np.asarray(embedding, dtype=np.float64)
    d = e.shape[-1]
    if d % 2:
        raise ValueError(f"rotary embedding needs an even width, got {d}")
    theta = base ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    ang = pos_index * theta
    c, s = np.cos(ang), np.sin(ang)
    x0, x1 = e[..., 0::2], e[..., 1::2]
    out = np.empty_like(e)
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c
    return out


def _rope_tables(n: int, dim: int, base: float, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    theta = base ** (-torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    ang = torch.arange(n, dtype=torch.float64)[:, None] * theta[None, :]
    return torch.cos(ang).to(dtype), torch.sin(ang).to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    x0, x1 = x[..., 0::2], x[..., 1::2]
    return torch.stack((x0 * cos - x1 * sin, x0 * sin + x1 * cos), dim=-1).flatten(-2)


class Block(nn.Module):
    def __init__(self, d: int, heads: int, ff_mult: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(d)
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff_mult * d), nn.GELU(), nn.Linear(ff_mult * d, d))

    def forward(self, x, cos, sin, mask):
        b, n, d = x.shape
        h = self.norm1(x)
        split = lambda t: t.view(b, n, self.heads, d // self.heads).transpose(1, 2)
        q, k, v = split(self.q(h)), split(self.k(h)), split(self.v(h))
        q, k = apply_rope(q, cos, sin), apply_rope(k, cos, sin)
        att = (q @ k.transpose(-1, -2)) / math.sqrt(d // self.heads)
        att = att.masked_fill(mask, float("-inf")).softmax(dim=-1)
        x = x + self.o((att @ v).transpose(1, 2).reshape(b, n, d))
        return x + self.ff(self.norm2(x))


class ContextModel(nn.Module):
    """The ``ModelWeights`` of the codec, as a torch module."""

    def __init__(self, config: ModelConfig | None = None, seed: int | None = 0):
        super().__init__()
        self.config = config or ModelConfig()
        c = self.config
        if seed is not None:
            gen_state = torch.random.get_rng_state()
            torch.manual_seed(seed)
        self.occ_emb = nn.Embedding(256, c.d)
        self.level_emb = nn.Embedding(c.max_level + 1, c.d)
        self.octant_emb = nn.Embedding(8, c.d)
        self.pos_proj = nn.Linear(3, c.d)
        self.bit_emb = nn.Embedding(8 * 3, c.d)
        self.query_emb = nn.Embedding(9, c.d)
        self.stack_proj = nn.Linear((c.D + 1) * c.d, c.d)
        self.blocks = nn.ModuleList(Block(c.d, c.heads, c.ff_mult) for _ in range(c.layers))
        self.norm = nn.LayerNorm(c.d)
        self.head_nonleaf = nn.Linear(c.d, 255)
        self.head_leafbit = nn.Linear(c.d, 2)
        self.head_leafpredict = nn.Linear(c.d, 8)
        for emb in (self.occ_emb, self.level_emb, self.octant_emb, self.bit_emb, self.query_emb):
            nn.init.normal_(emb.weight, std=0.02)
        if seed is not None:
            torch.random.set_rng_state(gen_state)
        self._rope_cache: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}
        self.eval()

    def head_layer(self, head: str) -> nn.Linear:
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
        return getattr(self, f"head_{head}")

    def zero_heads(self) -> None:
        with torch.no_grad():
            for h in HEADS:
                self.head_layer(h).weight.zero_()
                self.head_layer(h).bias.zero_()

    def _rope(self, n: int):
        if n not in self._rope_cache:
            self._rope_cache[n] = _rope_tables(n, self.config.d // self.config.heads, self.config.rope_base, torch.float32)
        return self._rope_cache[n]

    def logits(self, occ, level, octant, pos, bits, query, head: str) -> torch.Tensor:
        """Raw head outputs for a batch of windows.

        Shapes: occ/level/octant (B, n, D+1) int, pos (B, n, D+1, 3) float,
        bits (B, n, 8) int, query (B, n) int.
        """
        c = self.config
        if occ.dim() != 3 or occ.shape[-1] != c.D + 1:
            raise ValueError(f"feature stacks must have shape (B, n, {c.D + 1}), got {tuple(occ.shape)}")
        if pos.shape != (*occ.shape, 3) or bits.shape != (*occ.shape[:2], 8) or query.shape != occ.shape[:2]:
            raise ValueError("inconsistent window tensor shapes")
        b, n, _ = occ.shape
        lvl = (level + 1).clamp(0, c.max_level)
        rec = self.occ_emb(occ) + self.level_emb(lvl) + self.octant_emb(octant) + self.pos_proj(pos)
        x = self.stack_proj(rec.reshape(b, n, -1))
        slot = torch.arange(8, device=bits.device) * 3
        x = x + self.bit_emb(bits + slot).sum(dim=2) + self.query_emb(query)
        cos, sin = self._rope(n)
        mask = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
        for blk in self.blocks:
            x = blk(x, cos, sin, mask)
        return self.head_layer(head)(self.norm(x))

    def forward(self, occ, level, octant, pos, bits, query, head: str) -> torch.Tensor:
        out = self.logits(occ, level, octant, pos, bits, query, head)
        if head == "leafpredict":
            return torch.sigmoid(out)
        return out.softmax(dim=-1)

    @torch.no_grad()
    def predict(self, windows: Sequence[ContextWindow], head: str) -> list[np.ndarray]:
        """Probability rows for each window (only the first ``length`` rows)."""
        if not windows:
            return []
        t = windows_to_tensors(windows)
        probs = self.forward(*t, head=head).to(torch.float64).numpy()
        return [probs[i, : w.length] for i, w in enumerate(windows)]

    def checksum(self) -> int:
        from olc.context.checkpoint import weights_checksum

        return weights_checksum(self)


def windows_to_tensors(windows: Sequence[ContextWindow]):
    return (
        torch.from_numpy(np.stack([w.occ for w in windows])),
        torch.from_numpy(np.stack([w.level for w in windows])),
        torch.from_numpy(np.stack([w.octant for w in windows])),
        torch.from_numpy(np.stack([w.pos for w in windows])),
        torch.from_numpy(np.stack([w.bits for w in windows])),
        torch.from_numpy(np.stack([w.query for w in windows])),
    )


def forward(weights: ContextModel, window: ContextWindow, head: str) -> np.ndarray:
    """Per-entry probability rows for a single window."""
    return weights.predict([window], head)[0]
