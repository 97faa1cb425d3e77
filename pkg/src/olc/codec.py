"""Full encode/decode pipeline and the bitstream container.

Container layout (little-endian, normative)::

    offset  size  field
    0       4     magic b"OLC1"
    4       1     version (1)
    5       1     depth
    6       1     s, leaf lossless steps
    7       1     flags: bit0 learned model, bit1 checkerboard grouping
    8       8     qs (f64), grid step in output units
    16      24    origin (3 x f64), output-space position of grid coord (0,0,0)
    40      8     source_count (u64), points before quantization
    48      8     model_checksum (u64), 0 when only the adaptive baseline is used
    56      8     non-leaf payload length (u64)
    64      8     leaf payload length (u64)
    72      ...   non-leaf payload, then leaf payload

Leaf bits are coded in identity order.  Octant convention: see olc.octree.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from olc.context.baseline import AdaptiveFrequencyModel, nonleaf_key
from olc.context.features import level_features, make_window, nonleaf_schedule
from olc.context.model import ContextModel
from olc.entropy import SymbolStream, quantize_probs_batch
from olc.errors import ChecksumMismatchError, CorruptionError, FormatError
from olc.leaf_codec import DEFAULT_LEAF_WINDOW, LeafCodingPlan, code_leaf_steps, decode_leaf
from olc.octree import MAX_DEPTH, Octree, build_octree, children_codes, reconstruct
from olc.pc_io import PointCloud, QuantizedCloud, compute_qs, dequantize, normalize, quantize

MAGIC = b"OLC1"
VERSION = 1
FLAG_LEARNED = 0x01
FLAG_CHECKERBOARD = 0x02
_HEADER = struct.Struct("<4sBBBBd3dQQQQ")
HEADER_SIZE = _HEADER.size


@dataclass
class ModelSet:
    """Models for the three coding roles; ``None`` selects the adaptive baseline."""

    nonleaf: ContextModel | None = None
    leafbit: ContextModel | None = None
    leafpredict: ContextModel | None = None

    @classmethod
    def single(cls, model: ContextModel | None) -> "ModelSet":
        return cls(model, model, model)

    @property
    def learned(self) -> bool:
        return any(m is not None for m in (self.nonleaf, self.leafbit, self.leafpredict))

    def checksum(self) -> int:
        if not self.learned:
            return 0
        h = hashlib.blake2b(digest_size=8)
        for role in ("nonleaf", "leafbit", "leafpredict"):
            m = getattr(self, role)
            h.update(role.encode() + (m.checksum().to_bytes(8, "little") if m is not None else b"\0" * 8))
        return int.from_bytes(h.digest(), "little") or 1


def as_model_set(models) -> ModelSet:
    if models is None:
        return ModelSet()
    if isinstance(models, ModelSet):
        return models
    if isinstance(models, ContextModel):
        return ModelSet.single(models)
    raise TypeError(f"cannot interpret {type(models).__name__} as models")


@dataclass
class EncodeConfig:
    depth: int | None = None
    qs: float | None = None
    steps: int = 8
    models: ModelSet = field(default_factory=ModelSet)
    checkerboard: bool = True
    normalize: bool = False

    def __post_init__(self):
        if self.depth is not None and self.qs is not None:
            raise ValueError("give either depth or qs, not both")
        if not 0 <= self.steps <= 8:
            raise ValueError(f"steps must lie in [0, 8], got {self.steps}")
        self.models = as_model_set(self.models)


@dataclass
class Bitstream:
    depth: int
    s: int
    flags: int
    qs: float
    origin: tuple[float, float, float]
    source_count: int
    model_checksum: int
    nonleaf_payload: bytes
    leaf_payload: bytes

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            MAGIC, VERSION, self.depth, self.s, self.flags, self.qs, *self.origin,
            self.source_count, self.model_checksum, len(self.nonleaf_payload), len(self.leaf_payload),
        )
        return head + self.nonleaf_payload + self.leaf_payload

    @property
    def num_bits(self) -> int:
        return 8 * (HEADER_SIZE + len(self.nonleaf_payload) + len(self.leaf_payload))

    @property
    def bpp(self) -> float:
        return self.num_bits / self.source_count

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < 4 or data[:4] != MAGIC:
            raise FormatError("bad magic: not an OLC1 bitstream")
        if len(data) < HEADER_SIZE:
            raise CorruptionError("truncated header")
        magic, version, depth, s, flags, qs, ox, oy, oz, count, checksum, n0, n1 = _HEADER.unpack_from(data)
        if version != VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        if not 1 <= depth <= MAX_DEPTH or s > 8 or count == 0:
            raise CorruptionError("header fields out of range")
        end = HEADER_SIZE + n0 + n1
        if len(data) < end:
            raise CorruptionError(f"payload truncated: need {end} bytes, have {len(data)}")
        return cls(
            depth=depth, s=s, flags=flags, qs=qs, origin=(ox, oy, oz), source_count=count, model_checksum=checksum,
            nonleaf_payload=bytes(data[HEADER_SIZE : HEADER_SIZE + n0]),
            leaf_payload=bytes(data[HEADER_SIZE + n0 : end]),
        )


# ---------------------------------------------------------------------------
# non-leaf levels


def code_nonleaf_levels(
    stream: SymbolStream,
    tree: Octree,
    model: ContextModel | None,
    checkerboard: bool,
    truth: Octree | None = None,
    max_nodes: int | None = None,
) -> None:
    """Code levels ``0 .. depth-2`` in order, filling ``tree`` as it goes.

    ``tree`` must have level-0 codes; each decoded level's occupancy yields the
    next level's codes.  When encoding, ``truth`` supplies the occupancies.
    """
    adaptive = AdaptiveFrequencyModel(255) if model is None else None
    cap = model.config.window if model is not None else DEFAULT_LEAF_WINDOW
    for level in range(tree.depth - 1):
        codes = tree.codes[level]
        n = len(codes)
        occ = np.zeros(n, dtype=np.int64)
        gt = None if truth is None else truth.occupancy[level].astype(np.int64)
        schedule = nonleaf_schedule(codes, cap, checkerboard)
        if adaptive is not None:
            parent_occ = tree.occupancy[level - 1][tree.parent_index(level)].astype(np.int64) if level else np.zeros(n, np.int64)
            octants = tree.octants(level)
            for order, _ in schedule:
                for i in order.tolist():
                    key = nonleaf_key(level, int(octants[i]), int(parent_occ[i]))
                    sym = stream.code_one(adaptive.weights(key), None if gt is None else int(gt[i]) - 1)
                    adaptive.update(key, sym)
                    occ[i] = sym + 1
        else:
            D = model.config.D
            feats = level_features(tree, level, D)
            for order, split in schedule:
                w = make_window(feats, order, cap)
                probs = model.predict([w], "nonleaf")[0]
                passes = [(0, split)] + ([(split, len(order))] if split < len(order) else [])
                for lo, hi in passes:
                    if lo:
                        w.occ[:lo, D] = occ[order[:lo]]
                        probs = model.predict([w], "nonleaf")[0]
                    sel = order[lo:hi]
                    sym = stream.code(quantize_probs_batch(probs[lo:hi]), None if gt is None else gt[sel] - 1)
                    occ[sel] = sym + 1
        tree.occupancy[level] = occ.astype(np.uint8)
        nxt = children_codes(codes, tree.occupancy[level])
        if max_nodes is not None and len(nxt) > max_nodes:
            raise CorruptionError("decoded octree exceeds the declared point count")
        tree.set_level(level + 1, nxt)


# ---------------------------------------------------------------------------
# pipeline


def _grid(pc: PointCloud, config: EncodeConfig) -> tuple[QuantizedCloud, float, np.ndarray]:
    """Quantize; returns the cloud plus qs/origin expressed in input units."""
    if config.normalize:
        work, rec = normalize(pc)
    else:
        work, rec = pc, None
    if config.qs is not None:
        qs = float(config.qs)
    else:
        depth = config.depth if config.depth is not None else 10
        extent = work.extent
        qs = compute_qs(extent, depth) if extent > 0 else 1.0
    qc = quantize(work, qs)
    if rec is None:
        return qc, qs, qc.origin
    return qc, qs / rec.scale, (qc.origin + 1.0) / rec.scale + rec.offset


def encode_quantized(
    qc: QuantizedCloud,
    config: EncodeConfig | None = None,
    qs: float | None = None,
    origin=None,
    trace: list | None = None,
) -> Bitstream:
    config = config or EncodeConfig()
    models = config.models
    tree = build_octree(qc)
    nl_stream = SymbolStream(trace=trace)
    skeleton = Octree.skeleton(tree.depth)
    code_nonleaf_levels(nl_stream, skeleton, models.nonleaf, config.checkerboard, truth=tree)
    nonleaf = nl_stream.finish().data if tree.depth > 1 else b""

    plan = LeafCodingPlan(config.steps)
    leaf = b""
    if plan.s:
        lf_stream = SymbolStream(trace=trace)
        code_leaf_steps(lf_stream, tree, models.leafbit, plan, truth=tree.occupancy[-1])
        leaf = lf_stream.finish().data

    flags = (FLAG_LEARNED if models.learned else 0) | (FLAG_CHECKERBOARD if config.checkerboard else 0)
    o = qc.origin if origin is None else origin
    return Bitstream(
        depth=tree.depth, s=plan.s, flags=flags, qs=float(qc.qs if qs is None else qs),
        origin=tuple(float(v) for v in o), source_count=int(qc.source_count),
        model_checksum=models.checksum(), nonleaf_payload=nonleaf, leaf_payload=leaf,
    )


def encode(pc: PointCloud, config: EncodeConfig | None = None, trace: list | None = None) -> Bitstream:
    """Quantize, build the octree and entropy-code it."""
    config = config or EncodeConfig()
    qc, qs, origin = _grid(pc, config)
    return encode_quantized(qc, config, qs=qs, origin=origin, trace=trace)


def decode_quantized(data: bytes | Bitstream, models=None, trace: list | None = None) -> QuantizedCloud:
    bs = data if isinstance(data, Bitstream) else Bitstream.from_bytes(data)
    models = as_model_set(models)
    if bs.model_checksum != models.checksum():
        raise ChecksumMismatchError(
            f"bitstream expects model checksum {bs.model_checksum:#018x}, loaded {models.checksum():#018x}"
        )
    checkerboard = bool(bs.flags & FLAG_CHECKERBOARD)
    tree = Octree.skeleton(bs.depth)
    if bs.depth > 1:
        stream = SymbolStream(bs.nonleaf_payload, trace=trace)
        code_nonleaf_levels(stream, tree, models.nonleaf, checkerboard, max_nodes=bs.source_count)
    elif bs.nonleaf_payload:
        raise CorruptionError("non-leaf payload present for a depth-1 tree")
    leaf_occ = decode_leaf(
        bs.leaf_payload, tree, models.leafbit, models.leafpredict, bs.s, trace=trace,
    )
    tree.occupancy[-1] = leaf_occ
    return reconstruct(tree, qs=bs.qs, origin=np.array(bs.origin), source_count=bs.source_count)


def decode(data: bytes | Bitstream, models=None, trace: list | None = None) -> PointCloud:
    return dequantize(decode_quantized(data, models, trace))
