"""Strict JSON run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .scan2d import ShiftKind
from .state import DTYPES


class ConfigError(Exception):
    pass


class ConfigNotFoundError(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class ConfigValueError(ConfigError):
    pass


FULL = "L"  # chunk size equal to the whole sequence


@dataclass(frozen=True)
class RunConfig:
    precision: str = "fp64"
    chunk_sizes: tuple = (1, 16, 64)
    seq_lengths: tuple = (2048, 4096, 8192)
    d_k: int = 64
    d_v: int = 64
    seed: int = 0
    out: str | None = None
    shift_kind: str = "omni"
    scan_2d: bool = True
    workers: int = 1
    warmup: int = 2
    repeats: int = 5
    equiv_instances: int = 200
    equiv_max_len: int = 512
    equiv_max_dim: int = 32
    image_size: int = 16

    def __post_init__(self):
        def bad(key, why):
            raise ConfigValueError(f"{key}: {why}")

        if self.precision not in DTYPES:
            bad("precision", f"must be one of {sorted(DTYPES)}")
        for key in ("chunk_sizes", "seq_lengths"):
            vals = getattr(self, key)
            if not isinstance(vals, (list, tuple)) or not vals:
                bad(key, "must be a non-empty list")
            for v in vals:
                ok = v == FULL if key == "chunk_sizes" and isinstance(v, str) else _is_int(v) and v > 0
                if not ok:
                    bad(key, f"entries must be positive integers, got {v!r}")
            object.__setattr__(self, key, tuple(vals))
        for key in ("d_k", "d_v", "workers", "repeats", "equiv_max_len", "equiv_max_dim"):
            if not _is_int(getattr(self, key)) or getattr(self, key) < 1:
                bad(key, "must be a positive integer")
        for key in ("warmup", "equiv_instances"):
            if not _is_int(getattr(self, key)) or getattr(self, key) < 0:
                bad(key, "must be a non-negative integer")
        if not _is_int(self.seed) or not 0 <= self.seed < 2 ** 64:
            bad("seed", "must be an unsigned 64-bit integer")
        if self.image_size < 4 or self.image_size % 4:
            bad("image_size", "must be a positive multiple of 4")
        if self.shift_kind not in {k.value for k in ShiftKind}:
            bad("shift_kind", f"must be one of {[k.value for k in ShiftKind]}")
        if not isinstance(self.scan_2d, bool):
            bad("scan_2d", "must be a boolean")
        if self.out is not None and not isinstance(self.out, str):
            bad("out", "must be a path string or null")

    @property
    def shift(self) -> ShiftKind:
        return ShiftKind(self.shift_kind)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chunk_sizes"], d["seq_lengths"] = list(self.chunk_sizes), list(self.seq_lengths)
        return d


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


KNOWN_KEYS = frozenset(f.name for f in fields(RunConfig))


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigSyntaxError("config must be a JSON object")
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise UnknownKeyError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**raw)


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigNotFoundError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigSyntaxError(f"{p}: {e}") from None
    return config_from_dict(raw)
