"""Trainable pooling maps: weighted-sum pooling, frozen normalization, map updates.

Pooled vectors are pool-major: entry ``i * k + c`` is pool ``i``, codeword ``c``.
Each pool owns a single P x P weight map shared by all k codeword channels.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import StateError


@dataclass
class PoolMapSet:
    maps: np.ndarray  # (p, P, P)

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 3 or self.maps.shape[1] != self.maps.shape[2]:
            raise ValueError(f"maps must have shape (p, P, P), got {self.maps.shape}")
        if not np.all(np.isfinite(self.maps)):
            raise ValueError("pool map weights must be finite")

    @property
    def p(self) -> int:
        return self.maps.shape[0]

    @property
    def P(self) -> int:
        return self.maps.shape[1]

    def copy(self) -> "PoolMapSet":
        return PoolMapSet(self.maps.copy())


def flat_index(i: int, c: int, k: int) -> int:
    return i * k + c


def unflat_index(j: int, k: int) -> tuple[int, int]:
    return divmod(j, k)


def quadrant_bounds(P: int):
    """Row/column ranges of the four quadrants (TL, TR, BL, BR); TL takes ceil(P/2)."""
    s = math.ceil(P / 2)
    lo, hi = (0, s), (s, P)
    return [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]


def init_quadrant_maps(P: int) -> PoolMapSet:
    if P < 2:
        raise ValueError(f"quadrant maps need P >= 2, got {P}")
    maps = np.zeros((4, P, P))
    for i, ((r0, r1), (c0, c1)) in enumerate(quadrant_bounds(P)):
        maps[i, r0:r1, c0:c1] = 1.0 / ((r1 - r0) * (c1 - c0))
    return PoolMapSet(maps)


def pool_forward(maps: PoolMapSet, g: np.ndarray) -> np.ndarray:
    """h[i*k + c] = sum_{m,n} W^i[m,n] * g[m,n,c].

    ``g`` is one (P, P, k) grid or a stack (N, P, P, k); the result is (p*k,)
    or (N, p*k) accordingly.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim not in (3, 4) or g.shape[-3:-1] != (maps.P, maps.P):
        raise ValueError(f"grid shape {g.shape} does not match {maps.P}x{maps.P} maps")
    if g.ndim == 3:
        return np.einsum("imn,mnc->ic", maps.maps, g).reshape(-1)
    return np.einsum("imn,bmnc->bic", maps.maps, g).reshape(g.shape[0], -1)


class NormStats:
    """Per-feature mean and standard deviation; immutable once frozen."""

    def __init__(self, mu, sigma, frozen: bool = False):
        self.mu = np.array(mu, dtype=np.float64)
        self.sigma = np.array(sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ValueError("mu and sigma must be vectors of equal length")
        self.frozen = False
        if frozen:
            self.freeze()

    def fit(self, pooled, sigma_floor: float = 1e-8) -> "NormStats":
        if self.frozen:
            raise StateError("NormStats are frozen and cannot be refitted")
        H = np.asarray(pooled, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] < 2:
            raise ValueError("need at least two pooled vectors to fit normalization")
        if sigma_floor <= 0:
            raise ValueError("sigma_floor must be > 0")
        self.mu = H.mean(axis=0)
        self.sigma = np.maximum(H.std(axis=0), sigma_floor)
        return self

    def freeze(self) -> "NormStats":
        self.mu.setflags(write=False)
        self.sigma.setflags(write=False)
        self.frozen = True
        return self

    def checksum(self) -> str:
        return hashlib.sha256(self.mu.tobytes() + self.sigma.tobytes()).hexdigest()

    def __len__(self):
        return self.mu.shape[0]


def fit_norm_stats(pooled, sigma_floor: float = 1e-8) -> NormStats:
    """Fit per-index mean/std (1/N) over pooled vectors and freeze the result."""
    H = np.asarray(pooled, dtype=np.float64)
    if H.ndim != 2:
        raise ValueError("pooled must be an (N, p*k) array")
    stats = NormStats(np.zeros(H.shape[1]), np.ones(H.shape[1]))
    return stats.fit(H, sigma_floor).freeze()


def apply_norm(stats: NormStats, h: np.ndarray) -> np.ndarray:
    if not stats.frozen:
        raise StateError("normalization statistics must be frozen before use")
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != len(stats):
        raise ValueError(f"vector length {h.shape[-1]} does not match stats length {len(stats)}")
    return (h - stats.mu) / stats.sigma


def pool_update_delta(maps: PoolMapSet, grids, delta0, stats: NormStats, eta: float) -> np.ndarray:
    """The batch-averaged map change eta/B * sum_b sum_c delta0[i,c] g[m,n,c] / sigma[i,c]."""
    grids = np.asarray(grids, dtype=np.float64)
    delta0 = np.asarray(delta0, dtype=np.float64)
    if grids.ndim == 3:
        grids, delta0 = grids[None], delta0[None]
    B = grids.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    if grids.shape[1:3] != (maps.P, maps.P):
        raise ValueError(f"grid shape {grids.shape[1:]} does not match {maps.P}x{maps.P} maps")
    k = grids.shape[3]
    if delta0.shape != (B, maps.p * k) or len(stats) != maps.p * k:
        raise ValueError("delta0 and stats must have length p*k per image")
    scaled = (delta0 / stats.sigma).reshape(B, maps.p, k)
    # per-image terms summed in batch order before averaging
    total = np.zeros_like(maps.maps)
    for b in range(B):
        total += np.einsum("ic,mnc->imn", scaled[b], grids[b])
    return (eta / B) * total


def pool_update(maps: PoolMapSet, grids, delta0, stats: NormStats, eta: float) -> PoolMapSet:
    """Apply one averaged gradient step to every pool map.

    ``grids`` is a batch (B, P, P, k) of encoded grids and ``delta0`` the matching
    (B, p*k) sensitivities -dJ/dh_bar. Returns a new map set; weights are
    unconstrained in sign.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return PoolMapSet(maps.maps + pool_update_delta(maps, grids, delta0, stats, eta))
