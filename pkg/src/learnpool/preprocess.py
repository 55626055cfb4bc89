"""Dense patch extraction, per-patch contrast normalization and ZCA whitening.

Patches are flattened channel-major: all red rows of the window, then green,
then blue, matching the plane order of a CIFAR record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class WhiteningTransform:
    mean: np.ndarray    # (d,)
    matrix: np.ndarray  # (d, d), symmetric
    epsilon: float

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def grid_size(n: int, w: int, stride: int = 1) -> int:
    return (n - w) // stride + 1


def extract_patches(image, w: int, stride: int = 1) -> np.ndarray:
    """Return a (P, P, w*w*3) array; cell (m, n) is the window at pixel (m*stride, n*stride).

    ``image`` may be an ImageSample or a raw (n, n, 3) array.
    """
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    n = pixels.shape[0]
    if w > n:
        raise ValueError(f"patch size {w} exceeds image side {n}")
    if w < 1 or stride < 1:
        raise ValueError("patch size and stride must be >= 1")
    # (n-w+1, n-w+1, 3, w, w): window rows/cols last, channel before them
    windows = sliding_window_view(pixels, (w, w), axis=(0, 1))[::stride, ::stride]
    P = windows.shape[0]
    return windows.reshape(P, P, 3 * w * w)


def normalize_patch(patch: np.ndarray, eps_norm: float = 10.0) -> np.ndarray:
    """Subtract the patch mean and divide by sqrt(var + eps_norm).

    Works on the last axis, so stacks of patches normalize in one call.
    """
    if eps_norm < 0:
        raise ValueError("eps_norm must be >= 0")
    patch = np.asarray(patch, dtype=np.float64)
    centered = patch - patch.mean(axis=-1, keepdims=True)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    denom = np.sqrt(var + eps_norm)
    # constant patch with eps_norm == 0: numerator is exactly zero already
    return np.divide(centered, denom, out=np.zeros_like(centered), where=denom > 0)


def fit_whitening(patches, eps_zca: float = 0.1) -> WhiteningTransform:
    X = np.asarray(patches, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("fit_whitening needs at least two patches as an (N, d) array")
    if eps_zca < 0:
        raise ValueError("eps_zca must be >= 0")
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1])
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None) + eps_zca
    if np.any(evals <= 0):
        raise ValueError("covariance is singular; use eps_zca > 0")
    M = (evecs * (1.0 / np.sqrt(evals))) @ evecs.T
    M = 0.5 * (M + M.T)
    return WhiteningTransform(mean=mean, matrix=M, epsilon=float(eps_zca))


def apply_whitening(t: WhiteningTransform, patch: np.ndarray) -> np.ndarray:
    """``matrix @ (patch - mean)``; accepts a single patch or any stack along the last axis."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[-1] != t.d:
        raise ValueError(f"patch dimension {patch.shape[-1]} does not match transform dimension {t.d}")
    # matrix is symmetric, so right-multiplying row vectors is the same map
    return (patch - t.mean) @ t.matrix
