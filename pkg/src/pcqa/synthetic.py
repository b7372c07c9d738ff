"""Synthetic distorted-cloud benchmark with known quality ordering.

Ten reference surfaces are sampled uniformly at random; each is distorted at
five levels of isotropic Gaussian geometry noise. The synthetic MOS drops by
15 points per level from 85, shifted by a per-reference offset (content
dependent preference) and a small per-cloud jitter.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .manifest import Manifest, ManifestEntry, write_manifest
from .pointcloud import PointCloud, write_ply
from .rating import MosRange

NOISE_LEVELS = (0.002, 0.004, 0.008, 0.016, 0.032)
SCORE_RANGE = MosRange(0.0, 100.0)
MOS_TOP = 85.0
MOS_STEP = 15.0


def _sphere(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _ellipsoid(rng, n):
    return _sphere(rng, n) * np.array([1.0, 0.6, 0.35])


def _cube(rng, n):
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-1, 1, (n, 2))
    p = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        p[sel, a] = sign[sel]
        p[np.ix_(sel, others)] = uv[sel]
    return p


def _cylinder(rng, n):
    t = rng.uniform(0, 2 * np.pi, n)
    h = rng.uniform(-1, 1, n)
    return np.stack([0.5 * np.cos(t), 0.5 * np.sin(t), h], axis=1)


def _torus(rng, n):
    u = rng.uniform(0, 2 * np.pi, n)
    v = rng.uniform(0, 2 * np.pi, n)
    R, r = 0.7, 0.25
    return np.stack([(R + r * np.cos(v)) * np.cos(u), (R + r * np.cos(v)) * np.sin(u), r * np.sin(v)], axis=1)


def _cone(rng, n):
    h = np.sqrt(rng.uniform(0, 1, n))
    t = rng.uniform(0, 2 * np.pi, n)
    return np.stack([0.6 * h * np.cos(t), 0.6 * h * np.sin(t), 1.0 - 2.0 * h], axis=1)


def _wave(rng, n):
    xy = rng.uniform(-1, 1, (n, 2))
    z = 0.15 * np.sin(3 * xy[:, 0]) * np.cos(2 * xy[:, 1])
    return np.column_stack([xy, z])


def _saddle(rng, n):
    xy = rng.uniform(-1, 1, (n, 2))
    return np.column_stack([xy, 0.4 * (xy[:, 0] ** 2 - xy[:, 1] ** 2)])


def _helix_tube(rng, n):
    s = rng.uniform(0, 4 * np.pi, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    c = np.stack([0.6 * np.cos(s), 0.6 * np.sin(s), s / (2 * np.pi) - 1.0], axis=1)
    return c + 0.12 * np.stack([np.cos(phi) * np.cos(s), np.cos(phi) * np.sin(s), np.sin(phi)], axis=1)


def _two_planes(rng, n):
    half = n // 2
    a = np.column_stack([rng.uniform(-1, 1, (half, 2)), np.zeros(half)])
    b = np.column_stack([rng.uniform(-1, 1, n - half), np.zeros(n - half), rng.uniform(0, 1, n - half)])
    return np.vstack([a, b])


SHAPES = {
    "sphere": _sphere,
    "ellipsoid": _ellipsoid,
    "cube": _cube,
    "cylinder": _cylinder,
    "torus": _torus,
    "cone": _cone,
    "wave": _wave,
    "saddle": _saddle,
    "helix": _helix_tube,
    "corner": _two_planes,
}


def _colors(p):
    lo, hi = p.min(axis=0), p.max(axis=0)
    t = (p - lo) / np.where(hi > lo, hi - lo, 1.0)
    return np.round(40 + 200 * t).astype(np.uint8)


def reference_cloud(shape: str, n_points: int, seed: int) -> PointCloud:
    rng = np.random.default_rng([seed, list(SHAPES).index(shape)])
    p = SHAPES[shape](rng, n_points)
    return PointCloud(p, _colors(p), shape)


def distort(pc: PointCloud, sigma: float, seed: int, name: str) -> PointCloud:
    rng = np.random.default_rng(seed)
    return PointCloud(pc.positions + rng.normal(0.0, sigma, pc.positions.shape), pc.colors, name)


def benchmark_entries(n_shapes: int = 10, n_levels: int = 5, n_points: int = 2000, seed: int = 0):
    """Yield ``(cloud, mos, group_id)`` for the synthetic database."""
    if not 1 <= n_shapes <= len(SHAPES):
        raise ValueError(f"n_shapes must be in 1..{len(SHAPES)}")
    if not 1 <= n_levels <= len(NOISE_LEVELS):
        raise ValueError(f"n_levels must be in 1..{len(NOISE_LEVELS)}")
    rng = np.random.default_rng(seed)
    for s, shape in enumerate(list(SHAPES)[:n_shapes]):
        ref = reference_cloud(shape, n_points, seed)
        offset = rng.uniform(-5.0, 5.0)
        for level in range(n_levels):
            mos = MOS_TOP - MOS_STEP * level + offset + rng.uniform(-2.0, 2.0)
            mos = float(np.clip(mos, SCORE_RANGE.m, SCORE_RANGE.M))
            cloud = distort(ref, NOISE_LEVELS[level], seed * 1000 + s * 10 + level, f"{shape}_n{level + 1}")
            yield cloud, mos, shape


def generate_benchmark(out_dir: str | os.PathLike, n_shapes: int = 10, n_levels: int = 5,
                       n_points: int = 2000, seed: int = 0) -> Path:
    """Write PLY files and ``synthetic.csv`` (+ sidecar) into ``out_dir``; return the CSV path."""
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    entries = []
    for cloud, mos, group in benchmark_entries(n_shapes, n_levels, n_points, seed):
        ply = out / "clouds" / f"{cloud.name}.ply"
        write_ply(cloud, ply)
        entries.append(ManifestEntry(cloud.name, ply, mos, group))
    manifest = Manifest(tuple(entries), SCORE_RANGE, "synthetic")
    path = out / "synthetic.csv"
    write_manifest(manifest, path)
    return path
