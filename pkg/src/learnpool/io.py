"""On-disk formats: model bundle, PMAP map dump, PGM map images, metrics CSV.

All binary numbers are little-endian. Files are written to a temporary
sibling and renamed into place.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import ClassifierState
from .codebook import Codebook
from .config import TrainConfig, parse_config_text
from .errors import FormatError
from .pooling import NormStats, PoolMapSet
from .preprocess import WhiteningTransform

BUNDLE_MAGIC = b"LPBUNDLE"
BUNDLE_VERSION = 1
PMAP_MAGIC = b"PMAP"
PMAP_VERSION = 1
METRICS_HEADER = "examples_seen,phase,loss,val_accuracy"


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- PMAP -----------------------------------------------------------------

def encode_pmap(maps: PoolMapSet) -> bytes:
    header = PMAP_MAGIC + struct.pack("<III", PMAP_VERSION, maps.p, maps.P)
    return header + maps.maps.astype("<f8").tobytes()


def decode_pmap(raw: bytes) -> PoolMapSet:
    if len(raw) < 16 or raw[:4] != PMAP_MAGIC:
        raise FormatError("not a PMAP file")
    version, p, P = struct.unpack("<III", raw[4:16])
    if version != PMAP_VERSION:
        raise FormatError(f"unsupported PMAP version {version}")
    body = raw[16:]
    if len(body) != 8 * p * P * P:
        raise FormatError(f"PMAP body holds {len(body)} bytes, expected {8 * p * P * P}")
    return PoolMapSet(np.frombuffer(body, dtype="<f8").reshape(p, P, P).astype(np.float64))


def write_pmap(path, maps: PoolMapSet) -> None:
    atomic_write(path, encode_pmap(maps))


def read_pmap(path) -> PoolMapSet:
    return decode_pmap(Path(path).read_bytes())


# -- PGM ------------------------------------------------------------------

def map_to_gray(W: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant map becomes all zeros."""
    lo, hi = float(W.min()), float(W.max())
    if hi == lo:
        return np.zeros(W.shape, dtype=np.uint8)
    return np.round((W - lo) / (hi - lo) * 255.0).astype(np.uint8)


def encode_pgm(gray: np.ndarray) -> bytes:
    rows, cols = gray.shape
    return f"P5\n{cols} {rows}\n255\n".encode() + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def decode_pgm(raw: bytes) -> np.ndarray:
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    data = raw[len(raw) - rows * cols:]
    return np.frombuffer(data, dtype=np.uint8).reshape(rows, cols)


def export_maps(out_dir, maps: PoolMapSet, stem: str = "map") -> list[Path]:
    """One PGM per map plus a lossless PMAP dump; returns the written paths."""
    out_dir = Path(out_dir)
    written = []
    for i in range(maps.p):
        path = out_dir / f"{stem}_{i}.pgm"
        atomic_write(path, encode_pgm(map_to_gray(maps.maps[i])))
        written.append(path)
    path = out_dir / f"{stem}s.pmap"
    write_pmap(path, maps)
    written.append(path)
    return written


# -- metrics --------------------------------------------------------------

def format_metrics(history) -> str:
    lines = [METRICS_HEADER]
    for row in history:
        lines.append(f"{row.examples_seen},{row.phase},{row.loss:.10g},{row.val_acc:.10g}")
    return "\n".join(lines) + "\n"


def write_metrics(path, history) -> None:
    atomic_write(path, format_metrics(history))


# -- model bundle ---------------------------------------------------------

@dataclass
class ModelBundle:
    config: TrainConfig
    codebook: Codebook
    maps: PoolMapSet
    classifier: ClassifierState
    stats: NormStats
    version: int = BUNDLE_VERSION


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    key = name.encode()
    head = struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"bundle truncated at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self) -> tuple[str, np.ndarray]:
        (klen,) = self.unpack("<H")
        name = self.take(klen).decode()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}Q")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        return name, arr


def encode_bundle(b: ModelBundle) -> bytes:
    cfg = b.config.to_text().encode()
    cb = b.codebook
    if cb.whitening is None:
        raise ValueError("bundle requires a codebook with a whitening transform")
    arrays = [
        ("whitening.mean", cb.whitening.mean),
        ("whitening.matrix", cb.whitening.matrix),
        ("whitening.epsilon", np.array(cb.whitening.epsilon)),
        ("codebook.centroids", cb.centroids),
        ("codebook.encoding", np.array([cb.w, cb.stride, cb.eps_norm], dtype=np.float64)),
        ("maps", b.maps.maps),
        ("classifier.v1", b.classifier.v1),
        ("classifier.b1", b.classifier.b1),
        ("classifier.v2", b.classifier.v2),
        ("classifier.b2", b.classifier.b2),
        ("stats.mu", b.stats.mu),
        ("stats.sigma", b.stats.sigma),
    ]
    act = b.classifier.activation.encode()
    out = [BUNDLE_MAGIC, struct.pack("<I", b.version),
           struct.pack("<I", len(cfg)), cfg,
           struct.pack("<H", len(act)), act,
           struct.pack("<I", len(arrays))]
    out.extend(_pack_array(name, arr) for name, arr in arrays)
    return b"".join(out)


def decode_bundle(raw: bytes) -> ModelBundle:
    r = _Reader(raw)
    if r.take(len(BUNDLE_MAGIC)) != BUNDLE_MAGIC:
        raise FormatError("not a model bundle (bad magic)")
    (version,) = r.unpack("<I")
    if version != BUNDLE_VERSION:
        raise FormatError(f"bundle version {version} not supported (expected {BUNDLE_VERSION})")
    (clen,) = r.unpack("<I")
    try:
        config = TrainConfig(**parse_config_text(r.take(clen).decode()))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"bundle config unreadable: {exc}") from None
    (alen,) = r.unpack("<H")
    activation = r.take(alen).decode()
    (count,) = r.unpack("<I")
    arrays = dict(r.array() for _ in range(count))
    if r.pos != len(raw):
        raise FormatError(f"{len(raw) - r.pos} trailing bytes after bundle arrays")
    try:
        whitening = WhiteningTransform(arrays["whitening.mean"], arrays["whitening.matrix"],
                                       float(arrays["whitening.epsilon"]))
        w, stride, eps_norm = arrays["codebook.encoding"]
        codebook = Codebook(arrays["codebook.centroids"], whitening, int(w), int(stride), float(eps_norm))
        classifier = ClassifierState(arrays["classifier.v1"], arrays["classifier.b1"],
                                     arrays["classifier.v2"], arrays["classifier.b2"],
                                     activation=activation, frozen=True)
        stats = NormStats(arrays["stats.mu"], arrays["stats.sigma"], frozen=True)
        maps = PoolMapSet(arrays["maps"])
    except KeyError as exc:
        raise FormatError(f"bundle is missing array {exc}") from None
    except ValueError as exc:
        raise FormatError(f"bundle arrays inconsistent: {exc}") from None
    return ModelBundle(config, codebook, maps, classifier, stats, version)


def save_bundle(path, bundle: ModelBundle) -> None:
    atomic_write(path, encode_bundle(bundle))


def load_bundle(path) -> ModelBundle:
    return decode_bundle(Path(path).read_bytes())
