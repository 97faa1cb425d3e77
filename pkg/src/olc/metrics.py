"""Geometry distortion and rate metrics."""

from __future__ import annotations

import csv
import logging
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    d1_psnr: float
    d2_psnr: float = float("nan")
    chamfer: float = float("nan")
    label: str = ""


def _xyz(pc) -> np.ndarray:
    pts = getattr(pc, "points", pc)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("point set is empty")
    return pts


def nearest(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest neighbour in ``dst`` for every point of ``src``.

    Returns (squared distance, index).
    """
    dist, idx = cKDTree(dst).query(src, k=1, eps=0.0)
    return dist**2, idx


def psnr_from_mse(mse: float, peak: float) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(3.0 * peak**2 / mse)


def d1_mse(ref, test) -> tuple[float, float]:
    a, b = _xyz(ref), _xyz(test)
    return float(nearest(b, a)[0].mean()), float(nearest(a, b)[0].mean())


def d1_psnr(ref, test, peak: float) -> float:
    """Symmetric point-to-point PSNR; the worse direction decides."""
    return psnr_from_mse(max(d1_mse(ref, test)), peak)


def estimate_normals(points: np.ndarray, k: int = 8, rel_eps: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals from a covariance plane fit over each point and its k nearest neighbours.

    Returns (normals, valid) where ``valid`` is False for collinear or
    coincident neighbourhoods.
    """
    pts = _xyz(points)
    if len(pts) < k + 1:
        raise ValueError(f"normal estimation needs at least {k + 1} points, got {len(pts)}")
    _, idx = cKDTree(pts).query(pts, k=k + 1)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    valid = evals[:, 1] > rel_eps * np.maximum(evals[:, 2], np.finfo(float).tiny)
    return normals, valid


def d2_mse(ref, test, k: int = 8) -> tuple[float, float, int]:
    """Point-to-plane MSE in both directions, using normals of ``ref``.

    Returns (mse test->ref, mse ref->test, number of degenerate fallbacks).
    """
    a, b = _xyz(ref), _xyz(test)
    normals, valid = estimate_normals(a, k)

    # test -> ref: error of each test point against the plane at its match
    _, ia = nearest(b, a)
    disp = b - a[ia]
    proj = np.einsum("ij,ij->i", disp, normals[ia]) ** 2
    fwd = np.where(valid[ia], proj, (disp**2).sum(axis=1))

    # ref -> test: displacement from each ref point, projected on its own normal
    _, ib = nearest(a, b)
    disp = b[ib] - a
    proj = np.einsum("ij,ij->i", disp, normals) ** 2
    bwd = np.where(valid, proj, (disp**2).sum(axis=1))

    fallbacks = int((~valid[ia]).sum() + (~valid).sum())
    return float(fwd.mean()), float(bwd.mean()), fallbacks


def d2_psnr(ref, test, peak: float, k: int = 8) -> float:
    fwd, bwd, fallbacks = d2_mse(ref, test, k)
    if fallbacks:
        log.warning("D2: %d point(s) with degenerate neighbourhoods fell back to point-to-point error", fallbacks)
    return psnr_from_mse(max(fwd, bwd), peak)


def chamfer(ref, test) -> float:
    a, b = _xyz(ref), _xyz(test)
    return float(nearest(a, b)[0].mean() + nearest(b, a)[0].mean())


def bits_per_point(total_bits: int, source_count: int) -> float:
    if source_count <= 0:
        raise ValueError("source point count must be positive")
    return total_bits / source_count


def bit_error(r_target: float, r_actual: float) -> float:
    """Relative rate-control error ``|R_t - R_a| / R_t``."""
    if not r_target > 0:
        raise ValueError(f"target rate must be positive, got {r_target}")
    return abs(r_target - r_actual) / r_target


def _curve(points, quality: str) -> tuple[np.ndarray, np.ndarray]:
    if quality not in ("d1", "d2"):
        raise ValueError("quality must be 'd1' or 'd2'")
    rate, psnr = [], []
    for p in points:
        if isinstance(p, RdPoint):
            rate.append(p.bpp)
            psnr.append(p.d1_psnr if quality == "d1" else p.d2_psnr)
        else:
            rate.append(p[0])
            psnr.append(p[1])
    rate, psnr = np.asarray(rate, dtype=np.float64), np.asarray(psnr, dtype=np.float64)
    if len(rate) < 4:
        raise ValueError("BD-rate needs at least 4 points per curve")
    if not np.all(np.isfinite(psnr)) or np.any(rate <= 0):
        raise ValueError("BD-rate needs finite PSNR and positive rates")
    if len(np.unique(psnr)) != len(psnr):
        raise ValueError("PSNR values of a curve must be distinct")
    order = np.argsort(rate)
    if np.any(np.diff(psnr[order]) <= 0):
        warnings.warn("RD curve is not monotone in rate", stacklevel=3)
    return rate, psnr


def bd_rate(curve_a, curve_b, quality: str = "d1") -> float:
    """Bjontegaard delta rate of ``curve_b`` relative to ``curve_a``, in percent.

    Curves are sequences of :class:`RdPoint` or ``(bpp, psnr)`` pairs.
    Negative means ``curve_b`` needs fewer bits for the same quality.
    """
    ra, qa = _curve(curve_a, quality)
    rb, qb = _curve(curve_b, quality)
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    if not hi > lo:
        raise ValueError("RD curves have no overlapping quality range")
    pa = np.polyint(np.polyfit(qa, np.log10(ra), 3))
    pb = np.polyint(np.polyfit(qb, np.log10(rb), 3))
    avg = ((np.polyval(pb, hi) - np.polyval(pb, lo)) - (np.polyval(pa, hi) - np.polyval(pa, lo))) / (hi - lo)
    return float((10.0**avg - 1.0) * 100.0)


def write_rd_csv(path_or_file, points: Sequence[RdPoint]) -> None:
    own = isinstance(path_or_file, (str, Path))
    fh = open(path_or_file, "w", newline="") if own else (path_or_file or sys.stdout)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "bpp", "d1_psnr", "d2_psnr", "chamfer"])
        for p in points:
            w.writerow([p.label, _fmt(p.bpp), _fmt(p.d1_psnr), _fmt(p.d2_psnr), _fmt(p.chamfer)])
    finally:
        if own:
            fh.close()


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))
