"""Octree construction, canonical ordering and reconstruction.

Child-index convention (normative, the decoder depends on it): bit ``k`` of an
occupancy byte is the child in octant ``k = x_bit + 2*y_bit + 4*z_bit``.

Within a level, nodes are sorted by the Morton code of their ``cell_origin``.
A node's ``cell_origin`` is measured in units of its own cube edge, so the
root sits at (0, 0, 0), a child of ``c`` at ``2*c + offset``, and a leaf's
voxels at ``2*leaf_origin + offset``.  Because the interleave puts x in the
lowest bit of each triple, a Morton code's low three bits are the octant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from olc.pc_io import QuantizedCloud

MAX_DEPTH = 21  # 3 * 21 bits fit in a uint64 Morton code

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def popcount8(occ: np.ndarray) -> np.ndarray:
    return _POPCOUNT[np.asarray(occ, dtype=np.int64)]


def morton_encode(coords: np.ndarray, bits: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.uint64).reshape(-1, 3)
    code = np.zeros(len(coords), dtype=np.uint64)
    for b in range(bits):
        for axis in range(3):
            bit = (coords[:, axis] >> np.uint64(b)) & np.uint64(1)
            code |= bit << np.uint64(3 * b + axis)
    return code


def morton_decode(codes: np.ndarray, bits: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    out = np.zeros((len(codes), 3), dtype=np.uint64)
    for b in range(bits):
        for axis in range(3):
            bit = (codes >> np.uint64(3 * b + axis)) & np.uint64(1)
            out[:, axis] |= bit << np.uint64(b)
    return out.astype(np.int64)


@dataclass(frozen=True)
class OctreeNode:
    occupancy: int
    level: int
    octant: int
    cell_origin: tuple[int, int, int]
    is_leaf: bool


class Octree:
    """Level-ordered occupancy octree.

    ``codes[l]`` holds the Morton codes of the level-``l`` nodes (ascending)
    and ``occupancy[l]`` their 8-bit child masks.
    """

    def __init__(self, depth: int, codes: list[np.ndarray], occupancy: list[np.ndarray]):
        if len(codes) != depth or len(occupancy) != depth:
            raise ValueError("need one code/occupancy array per level")
        self.depth = depth
        self.codes = [np.asarray(c, dtype=np.uint64) for c in codes]
        self.occupancy = [np.asarray(o, dtype=np.uint8) for o in occupancy]
        self._parents: list[np.ndarray | None] = [None] * depth

    @classmethod
    def skeleton(cls, depth: int) -> "Octree":
        """Tree with only the root position known; filled in level by level."""
        empty = [np.zeros(0, dtype=np.uint64) for _ in range(depth)]
        empty[0] = np.zeros(1, dtype=np.uint64)
        return cls(depth, empty, [np.zeros(len(c), dtype=np.uint8) for c in empty])

    def set_level(self, level: int, codes: np.ndarray) -> None:
        """Install node codes for ``level`` with occupancies still unknown (0)."""
        self.codes[level] = np.asarray(codes, dtype=np.uint64)
        self.occupancy[level] = np.zeros(len(codes), dtype=np.uint8)
        self._parents[level] = None
        if level + 1 < self.depth:
            self._parents[level + 1] = None

    @property
    def levels(self) -> list[list[OctreeNode]]:
        return [self.level_nodes(l) for l in range(self.depth)]

    def level_nodes(self, level: int) -> list[OctreeNode]:
        origins = self.origins(level).tolist()
        octs = self.octants(level).tolist() if level else [0] * len(origins)
        occ = self.occupancy[level].tolist()
        leaf = level == self.depth - 1
        return [OctreeNode(o, level, k, tuple(c), leaf) for o, k, c in zip(occ, octs, origins)]

    def level_size(self, level: int) -> int:
        return len(self.codes[level])

    @property
    def num_nodes(self) -> int:
        return sum(len(c) for c in self.codes)

    def octants(self, level: int) -> np.ndarray:
        return (self.codes[level] & np.uint64(7)).astype(np.int64)

    def origins(self, level: int) -> np.ndarray:
        return morton_decode(self.codes[level], level)

    def node(self, level: int, index: int) -> OctreeNode:
        code = self.codes[level][index : index + 1]
        origin = tuple(int(v) for v in morton_decode(code, level)[0])
        return OctreeNode(
            occupancy=int(self.occupancy[level][index]),
            level=level,
            octant=int(code[0] & np.uint64(7)) if level else 0,
            cell_origin=origin,
            is_leaf=level == self.depth - 1,
        )

    def parent_index(self, level: int) -> np.ndarray:
        """Index into level ``level - 1`` of each node's parent."""
        if level == 0:
            return np.full(len(self.codes[0]), -1, dtype=np.int64)
        if self._parents[level] is None:
            self._parents[level] = np.searchsorted(self.codes[level - 1], self.codes[level] >> np.uint64(3))
        return self._parents[level]

    def symbol_sequence(self) -> bytes:
        """Canonical serialized occupancy stream (level order, Morton order)."""
        return b"".join(o.tobytes() for o in self.occupancy)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Octree) or other.depth != self.depth:
            return NotImplemented if not isinstance(other, Octree) else False
        return all(np.array_equal(a, b) for a, b in zip(self.codes, other.codes)) and all(
            np.array_equal(a, b) for a, b in zip(self.occupancy, other.occupancy)
        )

    def __repr__(self) -> str:
        return f"Octree(depth={self.depth}, nodes={self.num_nodes})"


def children_codes(codes: np.ndarray, occupancy: np.ndarray) -> np.ndarray:
    """Morton codes of the occupied children, in canonical order."""
    occ = np.asarray(occupancy, dtype=np.uint8)
    bits = np.unpackbits(occ[:, None], axis=1, bitorder="little").astype(bool)
    parent, octant = np.nonzero(bits)
    return (np.asarray(codes, dtype=np.uint64)[parent] << np.uint64(3)) | octant.astype(np.uint64)


def build_octree(qc: QuantizedCloud) -> Octree:
    if len(qc.coords) == 0:
        raise ValueError("cannot build an octree from an empty cloud")
    depth = qc.depth
    if depth > MAX_DEPTH:
        raise ValueError(f"depth {depth} exceeds maximum {MAX_DEPTH}")
    voxels = np.unique(morton_encode(qc.coords, depth))
    codes: list[np.ndarray] = [None] * depth  # type: ignore[list-item]
    occupancy: list[np.ndarray] = [None] * depth  # type: ignore[list-item]
    child = voxels
    for level in range(depth - 1, -1, -1):
        parents, inverse = np.unique(child >> np.uint64(3), return_inverse=True)
        occ = np.zeros(len(parents), dtype=np.uint8)
        np.bitwise_or.at(occ, inverse, (np.uint8(1) << (child & np.uint64(7)).astype(np.uint8)))
        codes[level] = parents
        occupancy[level] = occ
        child = parents
    return Octree(depth, codes, occupancy)


def reconstruct(tree: Octree, qs: float = 1.0, origin=None, source_count: int = 0) -> QuantizedCloud:
    leaf = tree.depth - 1
    voxels = children_codes(tree.codes[leaf], tree.occupancy[leaf])
    coords = morton_decode(voxels, tree.depth)
    return QuantizedCloud(
        coords,
        depth=tree.depth,
        qs=qs,
        origin=np.zeros(3) if origin is None else origin,
        source_count=source_count,
    )


def split_leaf_nonleaf(tree: Octree) -> tuple[list[OctreeNode], list[OctreeNode]]:
    """Split into (non-leaf nodes in level order, leaf nodes)."""
    levels = tree.levels
    non_leaf = [n for lvl in levels[:-1] for n in lvl]
    return non_leaf, levels[-1]


def parity_of_codes(codes: np.ndarray) -> np.ndarray:
    """(x + y + z) mod 2 of each node's cell origin."""
    return popcount8((np.asarray(codes, dtype=np.uint64) & np.uint64(7)).astype(np.int64)) & 1


def checkerboard_mask(codes: np.ndarray) -> np.ndarray:
    """True where the node belongs to group A (even coordinate sum)."""
    return parity_of_codes(codes) == 0


def checkerboard_partition(level_nodes: list[OctreeNode]) -> tuple[list[OctreeNode], list[OctreeNode]]:
    group_a, group_b = [], []
    for node in level_nodes:
        (group_a if sum(node.cell_origin) % 2 == 0 else group_b).append(node)
    return group_a, group_b


def occupancy_histograms(tree: Octree) -> list[np.ndarray]:
    """Normalized 256-bin occupancy histogram of each level."""
    out = []
    for occ in tree.occupancy:
        h = np.bincount(occ, minlength=256).astype(np.float64)
        out.append(h / h.sum())
    return out
