"""Multi-scale linearity/planarity structural features.

For every point, the covariance of its k nearest neighbors (the point itself
included) yields eigenvalues l1 >= l2 >= l3. Linearity is (l1 - l2) / l1 and
planarity is (l2 - l3) / l1. Mean, population std and 256-bin Shannon entropy
of both fields at each scale form the structural feature vector.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import KTooLarge
from .pointcloud import PointCloud

DEFAULT_SCALES = (10, 20)
ENTROPY_BINS = 256
_STATS = ("avg", "std", "ent")
_DOMAINS = ("lin", "pla")
# Candidate slack beyond k before falling back to an exact ball query.
_EXTRA_CANDIDATES = 4


def feature_names(scales: Sequence[int] = DEFAULT_SCALES) -> list[str]:
    return [f"{d}_{s}_k{k}" for k in sorted(scales) for d in _DOMAINS for s in _STATS]


FEATURE_NAMES = feature_names()


@dataclass(frozen=True)
class Neighborhood:
    center_index: int
    member_indices: np.ndarray

    @property
    def k(self) -> int:
        return int(self.member_indices.shape[0])


@dataclass(frozen=True)
class DomainField:
    lin: np.ndarray
    pla: np.ndarray
    k: int


@dataclass(frozen=True)
class StructuralFeatureVector:
    values: np.ndarray
    scales: tuple = DEFAULT_SCALES

    @property
    def names(self) -> list[str]:
        return feature_names(self.scales)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _sorted_neighbors(points, query_idx, cand):
    """Sort candidate rows by exact squared distance, then by index."""
    diff = points[cand] - points[query_idx][:, None, :]
    d2 = (diff * diff).sum(axis=2)
    order = np.lexsort((cand, d2), axis=1)
    return np.take_along_axis(cand, order, axis=1), np.take_along_axis(d2, order, axis=1)


def knn_indices(points: np.ndarray, k: int, tree: cKDTree | None = None) -> np.ndarray:
    """``(N, k)`` neighbor indices ordered by (distance, index).

    Candidates come from a kd-tree; distances are recomputed exactly so ties
    are resolved deterministically toward lower indices. Rows whose k-th
    distance touches the candidate horizon are redone with a ball query.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the number of points N={n}")
    rows = np.arange(n)
    if k == n:
        cand = np.broadcast_to(np.arange(n), (n, n)).copy()
        return _sorted_neighbors(points, rows, cand)[0]
    tree = cKDTree(points) if tree is None else tree
    m = min(n, k + _EXTRA_CANDIDATES)
    _, cand = tree.query(points, k=m)
    cand = cand.reshape(n, m).astype(np.int64)
    idx, d2 = _sorted_neighbors(points, rows, cand)
    if m == n:
        return np.ascontiguousarray(idx[:, :k])
    horizon = d2[:, -1]
    kth = d2[:, k - 1]
    suspicious = np.flatnonzero(kth >= horizon * (1.0 - 1e-9))
    out = np.ascontiguousarray(idx[:, :k])
    for i in suspicious:
        radius = math.sqrt(kth[i]) * (1.0 + 1e-7) + 1e-300
        ball = np.asarray(tree.query_ball_point(points[i], radius), dtype=np.int64)
        full, _ = _sorted_neighbors(points, np.array([i]), ball[None, :])
        out[i] = full[0, :k]
    return out


def knn_neighborhoods(pc: PointCloud, k: int) -> list[Neighborhood]:
    idx = knn_indices(pc.positions, k)
    return [Neighborhood(i, idx[i]) for i in range(idx.shape[0])]


def covariance_eigenvalues(pc: PointCloud, nb: Neighborhood) -> tuple[float, float, float]:
    ev = kernels.neighborhood_eigenvalues(pc.positions, np.asarray(nb.member_indices, dtype=np.int64)[None, :])
    return tuple(float(v) for v in ev[0])


def domains_from_eigenvalues(ev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linearity and planarity from ``(N, 3)`` descending eigenvalues; 0 where l1 == 0."""
    l1, l2, l3 = ev[:, 0], ev[:, 1], ev[:, 2]
    positive = l1 > 0.0
    safe = np.where(positive, l1, 1.0)
    lin = np.where(positive, (l1 - l2) / safe, 0.0)
    pla = np.where(positive, (l2 - l3) / safe, 0.0)
    return np.clip(lin, 0.0, 1.0), np.clip(pla, 0.0, 1.0)


def structural_domains(pc: PointCloud, k: int, neighbors: np.ndarray | None = None) -> DomainField:
    if neighbors is None:
        neighbors = knn_indices(pc.positions, k)
    ev = kernels.neighborhood_eigenvalues(pc.positions, np.ascontiguousarray(neighbors[:, :k]))
    lin, pla = domains_from_eigenvalues(ev)
    return DomainField(lin, pla, k)


def domain_statistics(field: np.ndarray) -> tuple[float, float, float]:
    """Mean, population std and entropy (bits, 256 bins on [0, 1]).

    Sums are exactly rounded, so the result does not depend on point order.
    """
    v = np.clip(np.asarray(field, dtype=np.float64).ravel(), 0.0, 1.0)
    if v.size == 0:
        raise ValueError("field must be non-empty")
    n = v.size
    avg = math.fsum(v.tolist()) / n
    dev = v - avg
    std = math.sqrt(math.fsum((dev * dev).tolist()) / n)
    bins = np.minimum((v * ENTROPY_BINS).astype(np.int64), ENTROPY_BINS - 1)
    counts = np.bincount(bins, minlength=ENTROPY_BINS)
    p = counts[counts > 0] / n
    ent = float(-(p * np.log2(p)).sum()) + 0.0
    return avg, std, max(ent, 0.0)


def extract_structural_features(pc: PointCloud, scales: Iterable[int] = DEFAULT_SCALES) -> StructuralFeatureVector:
    scales = tuple(sorted(set(int(k) for k in scales)))
    if not scales:
        raise ValueError("at least one scale is required")
    kmax = scales[-1]
    if kmax > pc.n:
        raise KTooLarge(f"scale k={kmax} exceeds the number of points N={pc.n}")
    # prefixes of the (distance, index)-ordered kmax list are the k-NN lists
    neighbors = knn_indices(pc.positions, kmax)
    values = []
    for k in scales:
        dom = structural_domains(pc, k, neighbors)
        values.extend(domain_statistics(dom.lin))
        values.extend(domain_statistics(dom.pla))
    return StructuralFeatureVector(np.array(values), scales)


def write_feature_csv(path: str | os.PathLike, rows: Iterable[tuple[str, np.ndarray]],
                      scales: Sequence[int] = DEFAULT_SCALES) -> None:
    names = feature_names(scales)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", *names])
        for name, values in rows:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (len(names),):
                raise ValueError(f"{name}: expected {len(names)} features, got {values.shape}")
            w.writerow([name, *(repr(float(x)) for x in values)])


def read_feature_csv(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "name":
            raise ValueError(f"{path}: first column must be 'name'")
        return {row[0]: np.array([float(x) for x in row[1:]]) for row in reader if row}
