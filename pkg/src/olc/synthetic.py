"""Synthetic point clouds for tests, acceptance runs and demos.

Dense "object" clouds are voxelized surfaces (every surface voxel occupied,
neighbours adjacent).  "LiDAR" clouds come from ray casting a spinning
multi-beam sensor against a small street scene, so points are sparse and
organized in rings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from olc.pc_io import PointCloud


def voxel_sphere(radius: float, center=(0.0, 0.0, 0.0), thickness: float = 0.87) -> np.ndarray:
    """Integer voxels within ``thickness`` of a sphere surface."""
    r = int(np.ceil(radius + thickness)) + 1
    g = np.arange(-r, r + 1)
    y, z = np.meshgrid(g, g, indexing="ij")
    yz2 = y**2 + z**2
    out = []
    for x in g:
        d = np.sqrt(x * x + yz2)
        sel = np.abs(d - radius) <= thickness / 2
        if sel.any():
            out.append(np.stack([np.full(sel.sum(), x), y[sel], z[sel]], axis=1))
    return np.concatenate(out) + np.round(center).astype(np.int64)


def voxel_plane(size: int, normal_axis: int = 2, offset: int = 0) -> np.ndarray:
    """A full ``size x size`` square of voxels perpendicular to ``normal_axis``."""
    a, b = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cols = [a.ravel(), b.ravel()]
    cols.insert(normal_axis, np.full(a.size, offset))
    return np.stack(cols, axis=1)


def object_cloud(rng: np.random.Generator, size: int = 64) -> PointCloud:
    """Voxelized sphere(s) and planes inside a ``size``-voxel cube."""
    parts = []
    n_spheres = int(rng.integers(1, 3))
    for _ in range(n_spheres):
        rad = rng.uniform(size * 0.15, size * 0.3)
        c = rng.uniform(rad + 1, size - rad - 2, 3)
        parts.append(voxel_sphere(rad, c))
    for _ in range(int(rng.integers(1, 3))):
        side = int(rng.integers(size // 4, size // 2))
        axis = int(rng.integers(0, 3))
        p = voxel_plane(side, axis, int(rng.integers(0, size - 1)))
        shift = rng.integers(0, size - side, 3)
        shift[axis] = 0
        parts.append(p + shift)
    pts = np.unique(np.concatenate(parts), axis=0)
    pts = pts[np.all((pts >= 0) & (pts < size), axis=1)]
    return PointCloud(pts.astype(np.float64))


def dense_surface(n: int = 64) -> PointCloud:
    """A wavy height-field surface, one voxel per (x, y) column plus fill.

    Vertical gaps between neighbouring columns are filled so the surface
    stays 6-connected like a real object scan.
    """
    x, y = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    h = np.round(n / 4 + (n / 8) * np.sin(x / 7.0) * np.cos(y / 9.0)).astype(np.int64)
    pts = [np.stack([x.ravel(), y.ravel(), h.ravel()], axis=1)]
    for dx, dy in ((1, 0), (0, 1)):
        hn = np.roll(h, (-dx, -dy), axis=(0, 1))
        lo, hi = np.minimum(h, hn), np.maximum(h, hn)
        for step in range(1, int((hi - lo).max()) + 1):
            m = (hi - lo) > step
            pts.append(np.stack([x[m], y[m], lo[m] + step], axis=1))
    return PointCloud(np.unique(np.concatenate(pts), axis=0).astype(np.float64))


def sparse_cloud(rng: np.random.Generator, n: int = 500, spacing: float = 10.0) -> PointCloud:
    """Points on a jittered lattice with minimum pairwise inf-norm distance > ``spacing - 2``."""
    side = int(np.ceil(n ** (1 / 3)))
    g = np.stack(np.meshgrid(*[np.arange(side)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)[:n]
    return PointCloud(g * spacing + rng.uniform(-1, 1, (len(g), 3)))


@dataclass
class StreetScene:
    """Ground plane plus vertical cylinders (poles, trunks) and boxes (cars, buildings)."""

    cylinders: np.ndarray  # (n, 4): cx, cy, radius, height
    boxes: np.ndarray  # (m, 6): lo xyz, hi xyz

    @classmethod
    def random(cls, rng: np.random.Generator, extent: float = 45.0, enclosed: bool = True) -> "StreetScene":
        n = int(rng.integers(6, 14))
        ang, dist = rng.uniform(0, 2 * np.pi, n), rng.uniform(4, extent - 5, n)
        cyl = np.stack([dist * np.cos(ang), dist * np.sin(ang), rng.uniform(0.15, 0.8, n), rng.uniform(2, 8, n)], 1)
        m = int(rng.integers(4, 10))
        ang, dist = rng.uniform(0, 2 * np.pi, m), rng.uniform(5, extent, m)
        c = np.stack([dist * np.cos(ang), dist * np.sin(ang)], 1)
        half = rng.uniform(0.8, 6.0, (m, 2))
        top = rng.uniform(1.4, 12.0, m)
        boxes = np.concatenate([c - half, np.zeros((m, 1)), c + half, top[:, None]], 1)
        if enclosed:
            # facades around the block so every azimuth has a far return
            r = extent + 6.0
            walls = [
                [-r - 2, -r - 2, 0, r + 2, -r, 0],
                [-r - 2, r, 0, r + 2, r + 2, 0],
                [-r - 2, -r, 0, -r, r, 0],
                [r, -r, 0, r + 2, r, 0],
            ]
            walls = np.array(walls, dtype=np.float64)
            walls[:, 5] = rng.uniform(8.0, 20.0, 4)
            boxes = np.concatenate([boxes, walls])
        return cls(cyl, boxes)


def ray_cast(scene: StreetScene, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Distance along each unit ray ``d`` from ``o`` to the first hit (inf on a miss)."""
    t = np.full(len(d), np.inf)
    down = d[:, 2] < 0
    t[down] = -o[2] / d[down, 2]

    A = d[:, 0] ** 2 + d[:, 1] ** 2
    for cx, cy, r, height in scene.cylinders:
        B = 2 * (d[:, 0] * (o[0] - cx) + d[:, 1] * (o[1] - cy))
        C = (o[0] - cx) ** 2 + (o[1] - cy) ** 2 - r * r
        disc = B * B - 4 * A * C
        ok = (disc >= 0) & (A > 0)
        tc = np.full(len(d), np.inf)
        tc[ok] = (-B[ok] - np.sqrt(disc[ok])) / (2 * A[ok])
        with np.errstate(invalid="ignore"):
            zc = o[2] + tc * d[:, 2]
        tc[(tc <= 0) | (zc > height) | (zc < 0)] = np.inf
        t = np.minimum(t, tc)

    for box in scene.boxes:
        lo, hi = box[:3], box[3:]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - o) / d
            t2 = (hi - o) / d
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tmax >= tmin) & (tmin > 0)
        t = np.where(hit, np.minimum(t, tmin), t)
    return t


def lidar_scan(
    rng: np.random.Generator,
    beams: int = 32,
    azimuth_steps: int = 900,
    max_range: float = 60.0,
    noise: float = 0.02,
    scene: StreetScene | None = None,
    position=(0.0, 0.0),
) -> PointCloud:
    """One sweep of a spinning multi-beam sensor mounted 1.8 m above ground.

    A random scene is drawn when ``scene`` is None.  Points are returned in
    sensor-centred coordinates.
    """
    if scene is None:
        scene = StreetScene.random(rng)
    elev = np.deg2rad(np.linspace(-24.0, 4.0, beams))
    az = np.linspace(0, 2 * np.pi, azimuth_steps, endpoint=False) + rng.uniform(0, 2 * np.pi / azimuth_steps)
    e, a = np.meshgrid(elev, az, indexing="ij")
    d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
    o = np.array([position[0], position[1], 1.8])
    t = ray_cast(scene, o, d)
    keep = np.isfinite(t) & (t < max_range) & (t > 0.5)
    rng_noise = rng.normal(0, noise, keep.sum())
    pts = d[keep] * (t[keep] + rng_noise)[:, None]
    pts[:, 2] += o[2]
    return PointCloud(pts)


def lidar_sequence(
    rng: np.random.Generator,
    frames: int,
    speed: float = 1.0,
    **scan_kw,
) -> list[PointCloud]:
    """Consecutive sweeps of a sensor driving straight through one scene."""
    scene = StreetScene.random(rng)
    heading = rng.uniform(0, 2 * np.pi)
    step = speed * np.array([np.cos(heading), np.sin(heading)])
    start = -step * (frames - 1) / 2
    return [lidar_scan(rng, scene=scene, position=start + i * step, **scan_kw) for i in range(frames)]
