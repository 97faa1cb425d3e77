"""Octree-based lossy point cloud geometry codec.

Two lossy modes share one octree/entropy-coding core:

* leaf-node lossy coding for dense object clouds: the first ``s`` child bits
  of every leaf are range-coded bit-plane by bit-plane, the remaining ``8 - s``
  are predicted by the decoder at zero rate;
* fractional quantization-step variable rate for sparse LiDAR-like clouds,
  with a closed-form rate controller interpolating between integer-depth
  anchors.
"""

from olc.errors import (
    ChecksumMismatchError,
    CorruptionError,
    DegenerateExtentError,
    FormatError,
    OlcError,
    PlyError,
    RateRangeError,
)
from olc.pc_io import (
    NormalizationRecord,
    PointCloud,
    QuantizedCloud,
    compute_qs,
    dequantize,
    load_ply,
    normalize,
    denormalize,
    quantize,
    remaining_ratio,
    write_ply,
)
from olc.octree import Octree, OctreeNode, build_octree, checkerboard_partition, reconstruct, split_leaf_nonleaf

__version__ = "0.1.0"

__all__ = [
    "ChecksumMismatchError",
    "CorruptionError",
    "DegenerateExtentError",
    "FormatError",
    "NormalizationRecord",
    "OlcError",
    "Octree",
    "OctreeNode",
    "PlyError",
    "PointCloud",
    "QuantizedCloud",
    "RateRangeError",
    "build_octree",
    "checkerboard_partition",
    "compute_qs",
    "denormalize",
    "dequantize",
    "load_ply",
    "normalize",
    "quantize",
    "reconstruct",
    "remaining_ratio",
    "split_leaf_nonleaf",
    "write_ply",
]
