"""Per-node context features and fixed-capacity context windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from olc.octree import Octree, checkerboard_mask

SENTINEL = 0  # occupancy value for padding / masked targets; real codes are 1..255
PAD_LEVEL = -1
BIT_UNKNOWN, BIT_ZERO, BIT_ONE = 0, 1, 2
NO_QUERY = 8


@dataclass(frozen=True)
class NodeFeatures:
    occupancy: int
    level: int
    octant: int
    position: tuple[int, int, int]


PAD_FEATURES = NodeFeatures(SENTINEL, PAD_LEVEL, 0, (0, 0, 0))


def extract_context(tree: Octree, node_index: tuple[int, int], D: int, mask_self: bool = True) -> list[NodeFeatures]:
    """Feature stack ``[ancestor_D, ..., ancestor_1, self]`` for one node.

    Ancestors above the root are padded with ``PAD_FEATURES``.  The node's
    own occupancy is replaced by the sentinel when it is the prediction target.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    level, index = node_index
    chain = [(level, index)]
    for _ in range(D):
        l, i = chain[-1]
        chain.append((l - 1, int(tree.parent_index(l)[i])) if l > 0 else None)
        if chain[-1] is None:
            break
    chain = chain[1:]
    stack: list[NodeFeatures] = []
    for k in range(D):
        if k < len(chain) and chain[k] is not None:
            l, i = chain[k]
            n = tree.node(l, i)
            stack.append(NodeFeatures(n.occupancy, n.level, n.octant, n.cell_origin))
        else:
            stack.append(PAD_FEATURES)
    stack.reverse()
    me = tree.node(level, index)
    stack.append(NodeFeatures(SENTINEL if mask_self else me.occupancy, me.level, me.octant, me.cell_origin))
    return stack


@dataclass
class LevelFeatures:
    """Vectorized feature stacks for every node of one level.

    Arrays are indexed ``[node, slot]`` with slot ``D`` being the node itself
    (its occupancy already masked to the sentinel).
    """

    occ: np.ndarray  # (n, D+1) int64
    level: np.ndarray  # (n, D+1) int64, PAD_LEVEL for padding
    octant: np.ndarray  # (n, D+1) int64
    pos: np.ndarray  # (n, D+1, 3) float32, cube centre scaled to [0, 1)
    true_occ: np.ndarray  # (n,) int64, ground truth (or 0 when unknown)

    def __len__(self) -> int:
        return len(self.occ)


def level_features(tree: Octree, level: int, D: int) -> LevelFeatures:
    n = tree.level_size(level)
    occ = np.zeros((n, D + 1), dtype=np.int64)
    lvl = np.full((n, D + 1), PAD_LEVEL, dtype=np.int64)
    octs = np.zeros((n, D + 1), dtype=np.int64)
    pos = np.zeros((n, D + 1, 3), dtype=np.float32)

    idx = np.arange(n)
    for slot in range(D, -1, -1):
        l = level - (D - slot)
        if l < 0:
            break
        if slot < D:
            idx = tree.parent_index(l + 1)[idx]
            occ[:, slot] = tree.occupancy[l][idx]
        lvl[:, slot] = l
        octs[:, slot] = tree.octants(l)[idx] if l > 0 else 0
        pos[:, slot] = ((tree.origins(l)[idx] + 0.5) / float(1 << l)).astype(np.float32)
    return LevelFeatures(occ, lvl, octs, pos, tree.occupancy[level].astype(np.int64))


@dataclass
class ContextWindow:
    """Fixed-capacity, padded batch of feature stacks in coding order."""

    occ: np.ndarray  # (cap, D+1)
    level: np.ndarray
    octant: np.ndarray
    pos: np.ndarray  # (cap, D+1, 3)
    bits: np.ndarray  # (cap, 8) known leaf bits, BIT_* states
    query: np.ndarray  # (cap,) bit index being coded, NO_QUERY otherwise
    nodes: np.ndarray  # (length,) node indices within the level
    capacity: int

    @property
    def length(self) -> int:
        return len(self.nodes)


def make_window(feats: LevelFeatures, nodes: np.ndarray, capacity: int) -> ContextWindow:
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) > capacity:
        raise ValueError(f"{len(nodes)} entries exceed window capacity {capacity}")
    d1 = feats.occ.shape[1]
    occ = np.zeros((capacity, d1), dtype=np.int64)
    lvl = np.full((capacity, d1), PAD_LEVEL, dtype=np.int64)
    octs = np.zeros((capacity, d1), dtype=np.int64)
    pos = np.zeros((capacity, d1, 3), dtype=np.float32)
    m = len(nodes)
    occ[:m], lvl[:m], octs[:m], pos[:m] = feats.occ[nodes], feats.level[nodes], feats.octant[nodes], feats.pos[nodes]
    return ContextWindow(
        occ=occ,
        level=lvl,
        octant=octs,
        pos=pos,
        bits=np.zeros((capacity, 8), dtype=np.int64),
        query=np.full(capacity, NO_QUERY, dtype=np.int64),
        nodes=nodes,
        capacity=capacity,
    )


def window_chunks(n: int, capacity: int) -> list[np.ndarray]:
    return [np.arange(i, min(i + capacity, n)) for i in range(0, n, capacity)]


def checkerboard_order(codes: np.ndarray, chunk: np.ndarray) -> tuple[np.ndarray, int]:
    """Reorder a Morton chunk to group A then group B; returns (order, |A|)."""
    is_a = checkerboard_mask(codes[chunk])
    return np.concatenate([chunk[is_a], chunk[~is_a]]), int(is_a.sum())


def nonleaf_schedule(codes: np.ndarray, capacity: int, checkerboard: bool) -> list[tuple[np.ndarray, int]]:
    """Window layout for one level: list of (node order, split).

    Entries before ``split`` are coded in the first pass with every occupancy
    masked; the rest in a second pass that reveals the first group.  Without
    checkerboard grouping the whole window is coded in one pass (split = len).
    """
    out = []
    for chunk in window_chunks(len(codes), capacity):
        if checkerboard:
            out.append(checkerboard_order(codes, chunk))
        else:
            out.append((chunk, len(chunk)))
    return out


def bits_state(occupancy: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Encode leaf bits as BIT_* states; ``known`` is a bool (n, 8) mask."""
    occ = np.asarray(occupancy, dtype=np.uint8)
    bits = np.unpackbits(occ[:, None], axis=1, bitorder="little").astype(np.int64)
    return np.where(known, bits + 1, BIT_UNKNOWN)
