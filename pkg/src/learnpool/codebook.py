"""k-means codebook learning and triangle encoding of image patches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preprocess import WhiteningTransform, apply_whitening, extract_patches, normalize_patch


@dataclass
class Codebook:
    centroids: np.ndarray                 # (k, d)
    whitening: WhiteningTransform | None = None
    w: int = 6
    stride: int = 1
    eps_norm: float = 10.0
    objective: list = field(default_factory=list)  # k-means cost after each assignment step

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]


def _sq_distances(X: np.ndarray, C: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Squared Euclidean distances (N, k), clamped at zero against cancellation."""
    c2 = np.einsum("ij,ij->i", C, C)
    out = np.empty((X.shape[0], C.shape[0]))
    for start in range(0, X.shape[0], chunk):
        xs = X[start:start + chunk]
        x2 = np.einsum("ij,ij->i", xs, xs)
        block = x2[:, None] - 2.0 * (xs @ C.T) + c2[None, :]
        np.maximum(block, 0.0, out=block)
        out[start:start + chunk] = block
    return out


def _distinct_rows(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of k rows with pairwise-distinct values, visited in random order."""
    seen, picked = set(), []
    for i in rng.permutation(X.shape[0]):
        key = X[i].tobytes()
        if key not in seen:
            seen.add(key)
            picked.append(i)
            if len(picked) == k:
                return np.array(picked)
    raise ValueError(f"only {len(picked)} distinct patches; cannot seed k={k} centroids")


def train_kmeans(patches, k: int, iters: int = 25, seed: int = 0, *,
                 whitening: WhiteningTransform | None = None, **encode_params) -> Codebook:
    """Plain Lloyd iterations from k distinct sampled patches.

    An empty cluster is re-seeded with the patch currently farthest from its
    own centroid; that patch moves to the new cluster, so the cost can only go
    down. Stops early once assignments no longer change.
    """
    X = np.asarray(patches, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("patches must be an (N, d) array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if X.shape[0] < k:
        raise ValueError(f"need at least k={k} patches, got {X.shape[0]}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    C = X[_distinct_rows(X, k, rng)].copy()

    objective = []
    prev_assign = None
    for _ in range(iters):
        dist = _sq_distances(X, C)
        assign = np.argmin(dist, axis=1)
        cost_per_point = dist[np.arange(X.shape[0]), assign]
        objective.append(float(cost_per_point.sum()))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign

        counts = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # farthest points first; each donates itself to one empty cluster
            donors = np.argsort(-cost_per_point, kind="stable")[:empty.size]
            assign = assign.copy()
            assign[donors] = empty
            counts = np.bincount(assign, minlength=k)
            prev_assign = None
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        # a donor may have been the sole member of its cluster; keep that centroid
        filled = counts > 0
        C[filled] = sums[filled] / counts[filled, None]

    return Codebook(centroids=C, whitening=whitening, objective=objective, **encode_params)


def kmeans_cost(X: np.ndarray, C: np.ndarray) -> float:
    return float(_sq_distances(np.asarray(X, dtype=np.float64), C).min(axis=1).sum())


def triangle_from_distances(z: np.ndarray) -> np.ndarray:
    """max(0, mean(z) - z_j) along the last axis; the farthest centroid is pinned to zero."""
    z = np.asarray(z, dtype=np.float64)
    codes = np.maximum(0.0, z.mean(axis=-1, keepdims=True) - z)
    # mean <= max holds exactly in real arithmetic; enforce it under rounding too
    np.put_along_axis(codes, np.argmax(z, axis=-1)[..., None], 0.0, axis=-1)
    return codes


def triangle_encode(cb: Codebook, patch: np.ndarray) -> np.ndarray:
    """Triangle code of one (already normalized and whitened) patch."""
    patch = np.asarray(patch, dtype=np.float64)
    z = np.linalg.norm(cb.centroids - patch[None, :], axis=1)
    return triangle_from_distances(z)


def encode_image(cb: Codebook, image, w: int | None = None, stride: int | None = None,
                 eps_norm: float | None = None) -> np.ndarray:
    """The (P, P, k) mid-level grid of one image.

    Extraction, contrast normalization, whitening and triangle coding at every
    grid cell, vectorized over cells.
    """
    w = cb.w if w is None else w
    stride = cb.stride if stride is None else stride
    eps_norm = cb.eps_norm if eps_norm is None else eps_norm
    patches = extract_patches(image, w, stride)
    P = patches.shape[0]
    X = normalize_patch(patches.reshape(P * P, -1), eps_norm)
    if cb.whitening is not None:
        X = apply_whitening(cb.whitening, X)
    if X.shape[1] != cb.d:
        raise ValueError(f"patch dimension {X.shape[1]} does not match codebook dimension {cb.d}")
    z = np.sqrt(_sq_distances(X, cb.centroids))
    return triangle_from_distances(z).reshape(P, P, cb.k)
