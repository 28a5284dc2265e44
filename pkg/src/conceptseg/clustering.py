"""Concept discovery: mini-batch k-means with spectral reassignment.

The two-stage scheme first overclusters the primitive embeddings into K
centers with mini-batch k-means, then groups the K centers into C
concepts via spectral clustering of a Gaussian affinity over the
centers. Eigendecomposition is dense and cheap because only the centers
(K <= 1000) are involved, never the full point set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingMatrix


@dataclass
class KMeansModel:
    centers: np.ndarray     # K x D
    inertia: float          # mean squared distance to assigned center

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if not np.isfinite(self.centers).all():
            raise ValueError("k-means centers contain NaN/Inf")
        if not np.isfinite(self.inertia) or self.inertia < 0:
            raise ValueError("inertia must be finite and non-negative")


@dataclass
class OcraParams:
    K: int = 200
    C: int = 27
    batch_size: int = 1000
    max_iter: int = 10000
    patience: int = 100
    spectral_sigma: float = 1e-5
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.K >= self.C >= 1):
            raise ValueError("need K >= C >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _nearest(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest center and the squared distance, per row."""
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2) \
        if X.shape[0] * centers.shape[0] * X.shape[1] < 2_000_000 else None
    if d2 is None:
        # |x-c|^2 = |x|^2 - 2 x.c + |c|^2, blockwise for large inputs
        d2 = (X * X).sum(axis=1)[:, None] - 2.0 * X @ centers.T \
            + (centers * centers).sum(axis=1)[None, :]
        np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(X)), labels]


def kmeans_pp_init(X: np.ndarray, k: int,
                   rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding."""
    n = len(X)
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = X[rng.integers(n)]
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r))
            centers[i] = X[min(idx, n - 1)]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def minibatch_kmeans(
    X: np.ndarray,
    k: int,
    batch_size: int = 1000,
    max_iter: int = 10000,
    patience: int = 100,
    seed: int = 0,
    init: np.ndarray | None = None,
) -> tuple[KMeansModel, np.ndarray]:
    """Mini-batch k-means with k-means++ init and patience-based stopping.

    Each batch assigns its points to the nearest center (L2) and moves
    centers by the standard per-center running-count rule. Training stops
    after ``max_iter`` batches, or once ``patience`` consecutive batches
    each produce a total squared center displacement below 1e-8 * D.
    Final assignments come from one full pass over X.
    """
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise ValueError("input contains NaN/Inf")
    n, d = X.shape
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(X, k, rng) if init is None \
        else np.array(init, dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    tol = 1e-8 * d

    still = 0
    for _ in range(max_iter):
        batch = rng.choice(n, size=min(batch_size, n), replace=False)
        labels, _ = _nearest(X[batch], centers)
        old = centers.copy()
        for c in np.unique(labels):
            members = X[batch[labels == c]]
            counts[c] += len(members)
            eta = len(members) / counts[c]
            centers[c] += eta * (members.mean(axis=0) - centers[c])
        displacement = ((centers - old) ** 2).sum()
        still = still + 1 if displacement < tol else 0
        if still >= patience:
            break

    labels, d2 = _nearest(X, centers)
    return KMeansModel(centers=centers, inertia=float(d2.mean())), labels


def lloyd_kmeans(
    X: np.ndarray,
    k: int,
    seed: int = 0,
    init: np.ndarray | None = None,
    max_iter: int = 300,
    return_trace: bool = False,
):
    """Full-batch Lloyd's iterations to convergence.

    Used as the convergence oracle for the mini-batch variant and as the
    clustering step on spectral embeddings. Inertia is non-increasing
    across iterations; empty clusters keep their previous center.
    """
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(X, k, rng) if init is None \
        else np.array(init, dtype=np.float64)
    trace = []
    labels = np.zeros(len(X), dtype=np.int64)
    for _ in range(max_iter):
        labels, d2 = _nearest(X, centers)
        trace.append(float(d2.mean()))
        new_centers = centers.copy()
        for c in range(k):
            members = X[labels == c]
            if len(members):
                new_centers[c] = members.mean(axis=0)
        if np.allclose(new_centers, centers, rtol=0.0, atol=1e-12):
            break
        centers = new_centers
    labels, d2 = _nearest(X, centers)
    model = KMeansModel(centers=centers, inertia=float(d2.mean()))
    if return_trace:
        return model, labels, trace
    return model, labels


def spectral_reassign(centers: np.ndarray, c: int,
                      sigma: float, seed: int = 0) -> np.ndarray:
    """Group K centers into C concepts by normalized spectral clustering.

    Affinity A_jk = exp(-sigma * |c_j - c_k|^2) with zero diagonal;
    eigenvectors of the C smallest eigenvalues of the symmetric
    normalized Laplacian are row-normalized and clustered with seeded
    k-means. Returns the length-K overcluster -> concept map.

    Zero-degree (isolated) centers get their own concept when C allows,
    otherwise they attach to the nearest center's concept.
    """
    centers = np.asarray(centers, dtype=np.float64)
    k = len(centers)
    if k < c:
        raise ValueError("need K >= C")
    diff = centers[:, None, :] - centers[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    affinity = np.exp(-sigma * d2)
    np.fill_diagonal(affinity, 0.0)

    degree = affinity.sum(axis=1)
    isolated = np.flatnonzero(degree <= 1e-300)
    active = np.flatnonzero(degree > 1e-300)
    mapping = np.zeros(k, dtype=np.int64)

    n_iso = len(isolated)
    c_active = c - n_iso
    if n_iso and (c_active < 1 or len(active) < c_active):
        # cannot give every isolated center its own concept: attach each
        # to the concept of its nearest other center
        c_active = min(c, len(active)) if len(active) else 0
        if c_active == 0:
            # all centers isolated; spread concepts round-robin
            return np.arange(k, dtype=np.int64) % c
        sub_map = _spectral_partition(
            affinity[np.ix_(active, active)],
            degree[active], c_active, seed)
        mapping[active] = sub_map
        for i in isolated:
            others = np.setdiff1d(np.arange(k), [i])
            nearest = others[np.argmin(d2[i, others])]
            mapping[i] = mapping[nearest] if nearest in active else 0
        return mapping

    if n_iso:
        sub_map = _spectral_partition(
            affinity[np.ix_(active, active)],
            degree[active], c_active, seed)
        mapping[active] = sub_map
        mapping[isolated] = c_active + np.arange(n_iso)
        return mapping

    return _spectral_partition(affinity, degree, c, seed)


def _spectral_partition(affinity: np.ndarray, degree: np.ndarray,
                        c: int, seed: int) -> np.ndarray:
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = np.eye(len(affinity)) - inv_sqrt[:, None] * affinity * inv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)
    emb = eigvecs[:, :c]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    _, labels = lloyd_kmeans(emb, c, seed=seed)
    return labels


def ocra(X: EmbeddingMatrix, params: OcraParams) -> tuple[
        np.ndarray, np.ndarray, KMeansModel, np.ndarray]:
    """Overclustering + reassignment on an embedding matrix.

    Returns (concept_labels, overcluster_labels, kmeans model,
    overcluster -> concept map), with one label per key row of X. When
    K == C the reassignment step is skipped and the map is the identity.
    """
    vectors = X.vectors.astype(np.float64)
    if len(vectors) < params.K:
        raise ValueError(
            f"need at least K={params.K} embeddings, got {len(vectors)}")
    model, over = minibatch_kmeans(
        vectors, params.K, batch_size=params.batch_size,
        max_iter=params.max_iter, patience=params.patience,
        seed=params.seed)
    if params.K == params.C:
        mapping = np.arange(params.K, dtype=np.int64)
        return over.copy(), over, model, mapping

    occupied = np.flatnonzero(np.bincount(over, minlength=params.K) > 0)
    live = model.centers[occupied]
    c_live = min(params.C, len(live))
    sub_map = spectral_reassign(live, c_live, params.spectral_sigma,
                                seed=params.seed)
    mapping = np.zeros(params.K, dtype=np.int64)
    mapping[occupied] = sub_map
    empty = np.setdiff1d(np.arange(params.K), occupied)
    for e in empty:
        # empty overclusters inherit the concept of the nearest live center
        d2 = ((live - model.centers[e]) ** 2).sum(axis=1)
        mapping[e] = sub_map[np.argmin(d2)]
    return mapping[over], over, model, mapping


def adjusted_rand_index(a: np.ndarray, b: np.ndarray) -> float:
    """Chance-corrected agreement between two label vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    contingency = np.zeros((len(ua), len(ub)), dtype=np.int64)
    np.add.at(contingency, (ia, ib), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(len(a))
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
