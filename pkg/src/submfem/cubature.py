"""Material-aware cubature from k-means clustering of skinning weights.

Per-tet features are the vertex-averaged skinning weights scaled columnwise
by the inverse squared eigenvalues (clamped away from zero so the
near-rigid translation mode does not dominate). Cubature tets are the
cluster members nearest each centroid; cubature weights are cluster masses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .mesh import DiscreteOperators, TetMesh

_EIGENVALUE_CLAMP = 1e-8
_KMEANS_MAX_ITER = 200
_KMEANS_TOL = 1e-6


@dataclass(frozen=True)
class CubatureScheme:
    """Cluster labels, representative tets, and per-cluster mass weights."""

    labels: NDArray[np.int64]
    cubature_tets: NDArray[np.int64]
    weights: NDArray[np.float64]

    @property
    def num_points(self) -> int:
        return self.cubature_tets.shape[0]


def recommend_cubature_count(m: int, num_tets: int) -> int:
    """20 cubature points per skinning mode, clamped to the tet count."""
    if m < 1:
        raise ValueError("mode count must be >= 1")
    return min(20 * m, num_tets)


def tet_features(W: NDArray[np.float64], eigenvalues: NDArray[np.float64],
                 mesh: TetMesh) -> NDArray[np.float64]:
    """Per-tet clustering features: averaged weights times Gamma^-2."""
    wt = W[mesh.tets].mean(axis=1)  # |T| x m
    gamma = np.asarray(eigenvalues, dtype=np.float64)
    floor = _EIGENVALUE_CLAMP * float(np.median(np.abs(gamma)))
    gamma = np.maximum(gamma, floor)
    return wt / gamma ** 2


def _kmeans_pp_init(features, k, rng):
    n = features.shape[0]
    centroids = np.empty((k, features.shape[1]))
    idx = int(rng.integers(n))
    centroids[0] = features[idx]
    d2 = np.sum((features - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = features[idx]
        d2 = np.minimum(d2, np.sum((features - centroids[j]) ** 2, axis=1))
    return centroids


def _repair_empty(labels, centroids, features, point_d2):
    """Reseed each empty cluster at the globally farthest point, never
    stealing the sole member of another cluster."""
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] > 0:
            continue
        candidates = point_d2.copy()
        candidates[counts[labels] <= 1] = -np.inf
        far = int(np.argmax(candidates))
        counts[labels[far]] -= 1
        labels[far] = c
        counts[c] = 1
        centroids[c] = features[far]
        point_d2[far] = 0.0


def lloyd_kmeans(features: NDArray[np.float64], k: int, seed: int):
    """Deterministic Lloyd's k-means with k-means++ seeding.

    Empty clusters are repaired by reseeding at the point currently
    farthest from its assigned centroid. Returns (labels, centroids).
    """
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(features, k, rng)
    prev_inertia = np.inf
    n = features.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(_KMEANS_MAX_ITER):
        d2 = (np.sum(features ** 2, axis=1)[:, None]
              - 2.0 * features @ centroids.T
              + np.sum(centroids ** 2, axis=1)[None, :])
        labels = np.argmin(d2, axis=1).astype(np.int64)
        point_d2 = np.maximum(d2[np.arange(n), labels], 0.0)
        _repair_empty(labels, centroids, features, point_d2)
        for c in range(k):
            members = labels == c
            centroids[c] = features[members].mean(axis=0)
        inertia = float(point_d2.sum())
        if prev_inertia < np.inf:
            denom = max(prev_inertia, 1e-300)
            if abs(prev_inertia - inertia) / denom < _KMEANS_TOL:
                break
        prev_inertia = inertia
    return labels, centroids


def kmeans_cubature(W: NDArray[np.float64], eigenvalues: NDArray[np.float64],
                    mesh: TetMesh, ops: DiscreteOperators, num_points: int,
                    seed: int) -> CubatureScheme:
    """Cluster tets on weighted skinning features and pick cubature points."""
    nt = mesh.num_tets
    if num_points > nt:
        raise ValueError(f"cubature count {num_points} exceeds tet count {nt}")
    if num_points < 1:
        raise ValueError("cubature count must be >= 1")
    features = tet_features(W, eigenvalues, mesh)
    if num_points == nt:
        labels = np.arange(nt, dtype=np.int64)
        centroids = features
    else:
        labels, centroids = lloyd_kmeans(features, num_points, seed)

    cubature_tets = np.empty(num_points, dtype=np.int64)
    weights = np.empty(num_points)
    for c in range(num_points):
        members = np.flatnonzero(labels == c)
        d2 = np.sum((features[members] - centroids[c]) ** 2, axis=1)
        cubature_tets[c] = members[int(np.argmin(d2))]
        weights[c] = ops.masses[members].sum()
    return CubatureScheme(labels, cubature_tets, weights)


def all_tets_scheme(ops: DiscreteOperators) -> CubatureScheme:
    """Trivial scheme with one cubature point per tet (exact integration)."""
    nt = ops.volumes.shape[0]
    idx = np.arange(nt, dtype=np.int64)
    return CubatureScheme(idx, idx.copy(), ops.masses.copy())


def effective_volumes(scheme: CubatureScheme, mesh: TetMesh,
                      density: NDArray[np.float64]) -> NDArray[np.float64]:
    """Cluster mass divided by the cubature tet's density.

    This is the volume weight used when evaluating elastic energy densities
    at cubature points; with one cluster per tet it reduces exactly to the
    per-tet rest volume.
    """
    return scheme.weights / density[scheme.cubature_tets]
