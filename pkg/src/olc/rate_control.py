"""Variable rate and closed-form rate control for sparse (LiDAR-like) clouds.

Clouds are normalized to [-1, 1]^3, so the integer-depth step is
``qs_L = 2 / (2**L - 1)``.  Any step between ``qs_L`` and ``qs_{L+1}`` yields
a depth ``L + 1`` tree with fewer nodes, i.e. a rate between the two
integer-depth anchors; bpp is modelled as affine in qs on that interval.
"""

from __future__ import annotations

import bisect
import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from olc.codec import Bitstream, EncodeConfig, ModelSet, as_model_set, encode
from olc.errors import RateRangeError
from olc.metrics import bit_error
from olc.octree import build_octree, occupancy_histograms
from olc.pc_io import PointCloud, compute_qs, normalize, quantize

log = logging.getLogger(__name__)

NORMALIZED_EXTENT = 2.0


@dataclass(frozen=True)
class Anchor:
    depth: int
    qs: float
    bpp: float


@dataclass
class RateAnchorTable:
    anchors: list[Anchor]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.anchors = sorted(self.anchors, key=lambda a: a.depth)
        for a, b in zip(self.anchors, self.anchors[1:]):
            if not b.bpp > a.bpp:
                raise ValueError(f"anchor bpp must increase with depth ({a.depth}: {a.bpp}, {b.depth}: {b.bpp})")
            if not b.qs < a.qs:
                raise ValueError("anchor qs must decrease with depth")

    @property
    def bpp_range(self) -> tuple[float, float]:
        return self.anchors[0].bpp, self.anchors[-1].bpp

    def bracket(self, bpp_t: float) -> tuple[Anchor, Anchor]:
        """Anchors ``(a, b)`` with ``a.bpp <= bpp_t <= b.bpp``; ``a is b`` on an exact hit."""
        bpps = [a.bpp for a in self.anchors]
        lo, hi = self.bpp_range
        if not lo <= bpp_t <= hi:
            raise RateRangeError(f"target {bpp_t} bpp outside calibrated range [{lo}, {hi}]")
        i = bisect.bisect_left(bpps, bpp_t)
        if bpps[i] == bpp_t:
            return self.anchors[i], self.anchors[i]
        return self.anchors[i - 1], self.anchors[i]

    def to_csv(self, path_or_file=None) -> str:
        buf = io.StringIO()
        for key in sorted(self.provenance):
            buf.write(f"# {key}={self.provenance[key]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["depth", "qs", "bpp"])
        for a in self.anchors:
            w.writerow([a.depth, repr(a.qs), repr(a.bpp)])
        text = buf.getvalue()
        if isinstance(path_or_file, (str, Path)):
            Path(path_or_file).write_text(text)
        elif path_or_file is not None:
            path_or_file.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "RateAnchorTable":
        text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) or "\n" not in str(path_or_text) else path_or_text
        prov, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                prov[k.strip()] = v.strip()
            elif line.strip():
                rows.append(line)
        reader = csv.DictReader(rows)
        if reader.fieldnames != ["depth", "qs", "bpp"]:
            raise ValueError(f"anchor CSV must have columns depth,qs,bpp, got {reader.fieldnames}")
        anchors = [Anchor(int(r["depth"]), float(r["qs"]), float(r["bpp"])) for r in reader]
        return cls(anchors, prov)


def qs_for_depth(depth: int) -> float:
    return compute_qs(NORMALIZED_EXTENT, depth)


def qs_for_target(bpp_t: float, anchor_l: Anchor, anchor_l1: Anchor) -> float:
    """Linear interpolation of qs between two anchors at the target rate."""
    lo, hi = anchor_l.bpp, anchor_l1.bpp
    if hi == lo:
        raise ValueError("degenerate anchor pair: equal bpp")
    if not min(lo, hi) <= bpp_t <= max(lo, hi):
        raise RateRangeError(f"target {bpp_t} outside anchor interval [{lo}, {hi}]")
    return (bpp_t - lo) / (hi - lo) * (anchor_l1.qs - anchor_l.qs) + anchor_l.qs


def _encode_bpp(args) -> float:
    pc, qs, models, checkerboard = args
    return encode(pc, EncodeConfig(qs=qs, models=models, checkerboard=checkerboard, normalize=True)).bpp


def measure_bpp(
    dataset: Sequence[PointCloud],
    qs: float,
    models=None,
    checkerboard: bool = True,
    jobs: int = 1,
) -> list[float]:
    """bpp of every cloud encoded at normalized step ``qs``."""
    models = as_model_set(models)
    work = [(pc, qs, models, checkerboard) for pc in dataset]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_encode_bpp, work))
    return [_encode_bpp(w) for w in work]


def calibrate(
    dataset: Sequence[PointCloud],
    models=None,
    depths: Sequence[int] = (10, 11),
    checkerboard: bool = True,
    jobs: int = 1,
    dataset_name: str = "",
) -> RateAnchorTable:
    """Anchor table from the mean bpp of ``dataset`` at each integer depth."""
    if not dataset:
        raise ValueError("calibration dataset is empty")
    depths = list(depths)
    if not depths or depths != list(range(depths[0], depths[0] + len(depths))):
        raise ValueError(f"depths must be a contiguous increasing range, got {depths}")
    models = as_model_set(models)
    anchors = []
    for L in depths:
        qs = qs_for_depth(L)
        bpp = float(np.mean(measure_bpp(dataset, qs, models, checkerboard, jobs)))
        log.info("anchor depth=%d qs=%.6g bpp=%.6f", L, qs, bpp)
        anchors.append(Anchor(L, qs, bpp))
    prov = {"model_checksum": f"{models.checksum():#018x}", "dataset": dataset_name or f"{len(dataset)} clouds"}
    return RateAnchorTable(anchors, prov)


def calibrate_per_cloud(dataset: Sequence[PointCloud], models=None, depths=(10, 11), **kw) -> list[RateAnchorTable]:
    return [calibrate([pc], models, depths, **kw) for pc in dataset]


@dataclass
class RcResult:
    bitstream: Bitstream
    qs: float
    target_bpp: float
    achieved_bpp: float
    bit_error: float


def rc_encode(
    pc: PointCloud,
    bpp_t: float,
    table: RateAnchorTable,
    models=None,
    checkerboard: bool = True,
) -> RcResult:
    """Encode ``pc`` at the qs predicted for ``bpp_t``; no model adaptation."""
    a, b = table.bracket(bpp_t)
    qs = a.qs if a is b else qs_for_target(bpp_t, a, b)
    bs = encode(pc, EncodeConfig(qs=qs, models=as_model_set(models), checkerboard=checkerboard, normalize=True))
    return RcResult(bs, qs, bpp_t, bs.bpp, bit_error(bpp_t, bs.bpp))


def linearity_deviation(qs_values: Sequence[float], bpps: Sequence[float]) -> float:
    """Max |residual| of a least-squares line bpp(qs), relative to the bpp range."""
    q = np.asarray(qs_values, dtype=np.float64)
    r = np.asarray(bpps, dtype=np.float64)
    span = r.max() - r.min()
    if not span > 0:
        raise ValueError("bpp range is zero; linearity deviation undefined")
    coef = np.polyfit(q, r, 1)
    return float(np.max(np.abs(np.polyval(coef, q) - r)) / span)


def bpp_qs_linearity_check(
    dataset: Sequence[PointCloud],
    models,
    anchor_l: Anchor,
    anchor_l1: Anchor,
    n_samples: int = 5,
    checkerboard: bool = True,
) -> float:
    """Encode at ``n_samples`` interior steps and measure deviation from a line.

    The two anchors are included in the fit.
    """
    if n_samples < 3:
        raise ValueError("need at least 3 interior samples")
    interior = np.linspace(anchor_l.qs, anchor_l1.qs, n_samples + 2)[1:-1]
    qs = [anchor_l.qs, *interior, anchor_l1.qs]
    bpps = [anchor_l.bpp]
    bpps += [float(np.mean(measure_bpp(dataset, q, models, checkerboard))) for q in interior]
    bpps.append(anchor_l1.bpp)
    return linearity_deviation(qs, bpps)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def qs_for_fractional_depth(depth: float) -> float:
    """Step for a fractional "depth" such as 16.2, i.e. the integer formula at non-integer L."""
    return NORMALIZED_EXTENT / (2.0**depth - 1.0)


def pooled_occupancy_histogram(tree) -> np.ndarray:
    """Normalized histogram of all occupancy symbols of ``tree`` (every level)."""
    h = np.zeros(256)
    for l in range(tree.depth):
        h += np.bincount(tree.occupancy[l], minlength=256)
    return h / h.sum()


@dataclass
class OccupancySimilarity:
    pooled_tv: float
    per_level: list[tuple[int, float, int, int]]  # (level, tv, nodes at fractional qs, nodes at integer qs)

    @property
    def weighted_tv(self) -> float:
        """Per-level TV averaged with the integer-depth tree's node counts as weights."""
        w = np.array([r[3] for r in self.per_level], dtype=np.float64)
        return float(np.dot([r[1] for r in self.per_level], w) / w.sum())


def occupancy_similarity(pc: PointCloud, qs_fractional: float, depth: int) -> OccupancySimilarity:
    """Compare occupancy statistics of the trees built at a fractional step and
    at the integer step of ``depth``; both trees have ``depth`` levels.
    """
    norm, _ = normalize(pc)
    qa = quantize(norm, qs_fractional)
    qb = quantize(norm, qs_for_depth(depth))
    if qa.depth != depth or qb.depth != depth:
        raise ValueError(f"steps do not both produce depth {depth} trees ({qa.depth}, {qb.depth})")
    ta, tb = build_octree(qa), build_octree(qb)
    ha, hb = occupancy_histograms(ta), occupancy_histograms(tb)
    per = [(l, total_variation(ha[l], hb[l]), ta.level_size(l), tb.level_size(l)) for l in range(depth)]
    pooled = total_variation(pooled_occupancy_histogram(ta), pooled_occupancy_histogram(tb))
    return OccupancySimilarity(pooled, per)
