"""CIFAR-10 binary records, seeded train/validation splits and a synthetic stand-in.

A CIFAR-10 binary batch is a flat sequence of 3073-byte records: one label
byte followed by 1024 red, 1024 green and 1024 blue bytes, each plane in
row-major order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # (n, n, 3) float64 on the [0, 255] scale
    label: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] != px.shape[1]:
            raise ValueError(f"pixels must have shape (n, n, 3), got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 255:
            raise ValueError("pixel values must be finite and within [0, 255]")
        if self.label < 0:
            raise ValueError(f"negative label {self.label}")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", int(self.label))

    @property
    def n(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    validation: list
    seed: int
    train_indices: np.ndarray
    validation_indices: np.ndarray


def _record_size(n: int) -> int:
    return 1 + 3 * n * n


def load_cifar_batch(path: str | os.PathLike, n: int = 32, t: int = 10) -> list[ImageSample]:
    raw = Path(path).read_bytes()
    rec = _record_size(n)
    if len(raw) % rec:
        offset = (len(raw) // rec) * rec
        raise FormatError(f"{path}: truncated record at byte offset {offset} "
                          f"({len(raw) - offset} of {rec} bytes)")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = records[:, 0]
    bad = np.flatnonzero(labels >= t)
    if bad.size:
        i = int(bad[0])
        raise DataError(f"{path}: record {i} (byte offset {i * rec}) has label {labels[i]} >= t={t}")
    planes = records[:, 1:].reshape(-1, 3, n, n).transpose(0, 2, 3, 1)
    return [ImageSample(planes[i].astype(np.float64), int(labels[i])) for i in range(len(records))]


def encode_cifar_records(samples) -> bytes:
    """Inverse of :func:`load_cifar_batch`; pixels must be integers in [0, 255]."""
    chunks = []
    for s in samples:
        px = s.pixels
        if not np.array_equal(px, np.round(px)):
            raise ValueError("CIFAR records hold integer pixel values only")
        if s.label > 255:
            raise ValueError(f"label {s.label} does not fit in one byte")
        chunks.append(bytes([s.label]))
        chunks.append(px.transpose(2, 0, 1).astype(np.uint8).tobytes())
    return b"".join(chunks)


def write_cifar_batch(path: str | os.PathLike, samples) -> None:
    Path(path).write_bytes(encode_cifar_records(samples))


def load_cifar_dir(data_dir: str | os.PathLike, n: int = 32, t: int = 10) -> list[ImageSample]:
    """Load every ``data_batch_*.bin`` in ``data_dir`` in sorted name order."""
    data_dir = Path(data_dir)
    files = sorted(data_dir.glob("data_batch_*.bin"))
    if not files:
        raise FileNotFoundError(f"no data_batch_*.bin files under {data_dir}")
    samples = []
    for f in files:
        samples.extend(load_cifar_batch(f, n=n, t=t))
    return samples


def split(samples, fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    samples = list(samples)
    if not samples:
        raise ValueError("cannot split an empty sample list")
    if len(samples) < 2:
        raise ValueError("need at least two samples to split")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(samples))
    cut = math.floor(fraction * len(samples))
    tr, va = order[:cut], order[cut:]
    return DatasetSplit(
        train=[samples[i] for i in tr],
        validation=[samples[i] for i in va],
        seed=seed,
        train_indices=tr,
        validation_indices=va,
    )


def generate_synthetic(count: int, n: int = 16, seed: int = 0, *,
                       background_std: float = 2.0) -> list[ImageSample]:
    """Two-class images separable only by where a textured block sits.

    Class 0 puts a ceil(n/2)-sided block of uniform noise in the upper-left
    corner, class 1 in the lower-right; the rest is near-constant gray.
    Pixel values are integers so samples survive a CIFAR round-trip.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    block = math.ceil(n / 2)
    if n < 2:
        raise ValueError(f"image side n={n} too small for a texture block")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % 2)
    out = []
    for label in labels:
        img = 128.0 + background_std * rng.standard_normal((n, n, 3))
        tex = rng.uniform(0.0, 255.0, size=(block, block, 3))
        if label == 0:
            img[:block, :block] = tex
        else:
            img[n - block:, n - block:] = tex
        out.append(ImageSample(np.clip(np.round(img), 0, 255), int(label)))
    return out


def quadrant_variances(pixels: np.ndarray) -> np.ndarray:
    """Pixel variance of the (upper-left, upper-right, lower-left, lower-right) quadrants."""
    n = pixels.shape[0]
    s = math.ceil(n / 2)
    return np.array([pixels[:s, :s].var(), pixels[:s, s:].var(),
                     pixels[s:, :s].var(), pixels[s:, s:].var()])


def stack(samples) -> tuple[np.ndarray, np.ndarray]:
    """(N, n, n, 3) pixel array and (N,) label array."""
    return (np.stack([s.pixels for s in samples]),
            np.array([s.label for s in samples], dtype=np.int64))
