"""Training configuration, presets and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class TrainConfig:
    # image / patch geometry
    n: int = 32
    w: int = 6
    stride: int = 1
    # codebook
    k: int = 400
    kmeans_iters: int = 25
    codebook_patches: int = 100_000
    eps_norm: float = 10.0
    eps_zca: float = 0.1
    # pooling
    p: int = 4
    sigma_floor: float = 1e-8
    eta_pool: float = 5e-5
    # classifier
    hidden: int = 128
    t: int = 10
    activation: str = "sigmoid"
    eta_net: float = 1e-2
    batch_size: int = 10
    # schedule
    phase1_examples: int = 250_000
    phase2_examples: int = 15_000
    val_check_interval: int = 500
    phase1_check_interval: int = 0
    trials: int = 5
    seed: int = 0
    train_fraction: float = 0.8
    # data / runtime
    synthetic: bool = False
    synthetic_count: int = 400
    cache_size: int = 1000

    def __post_init__(self):
        if self.activation not in ("sigmoid", "tanh"):
            raise ValueError(f"activation must be 'sigmoid' or 'tanh', got {self.activation!r}")
        for name in ("n", "w", "stride", "k", "p", "hidden", "t", "batch_size",
                     "kmeans_iters", "trials", "val_check_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.w > self.n:
            raise ValueError(f"patch size w={self.w} exceeds image side n={self.n}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.phase1_examples < 0 or self.phase2_examples < 0:
            raise ValueError("example counts must be non-negative")
        if self.eta_pool < 0 or self.eta_net < 0:
            raise ValueError("learning rates must be non-negative")

    @property
    def grid_size(self) -> int:
        """Side P of the encoded grid (valid windows per axis)."""
        return (self.n - self.w) // self.stride + 1

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        """Serialize as ``key = value`` lines in field order."""
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


PRESETS = {
    "paper": {},
    "desk": dict(
        n=16, k=16, w=4, hidden=16, t=2,
        phase1_examples=4000, phase2_examples=1500, val_check_interval=250,
        phase1_check_interval=1000, codebook_patches=5000, sigma_floor=1e-3,
        synthetic=True, synthetic_count=400, cache_size=1000,
    ),
}


def preset(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**PRESETS[name])


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw, 0) if raw.lower().startswith("0x") else int(raw)
    if kind is float:
        return float(raw)
    return raw


_FIELD_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type]
                for f in fields(TrainConfig)}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _coerce(_FIELD_TYPES[key], raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
    return values


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    values = parse_config_text(Path(path).read_text())
    base = base or TrainConfig()
    try:
        return base.replace(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
