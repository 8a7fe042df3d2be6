"""Service configuration: defaults < config file < EMOFACE_* env < CLI flags."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

ENV_PREFIX = "EMOFACE_"


class ConfigFileError(ValueError):
    pass


@dataclass
class ServiceConfig:
    checkpoint: str = ""
    host: str = "127.0.0.1"
    port: int = 8000
    max_upload_mb: float = 64.0
    max_queue_depth: int = 8
    workers: int = 1
    retention_s: float = 3600.0
    duration_tolerance_s: float = 0.5
    work_dir: str = ""                 # spool for uploads/results; tempdir if empty
    mask_mode: str = "full"
    sample_rate: int = 16000
    fps: float = 25.0

    def __post_init__(self):
        if self.max_queue_depth < 1:
            raise ConfigFileError("max_queue_depth must be >= 1")
        if self.workers < 1:
            raise ConfigFileError("workers must be >= 1")
        if self.retention_s <= 0:
            raise ConfigFileError("retention_s must be positive")
        if self.duration_tolerance_s < 0:
            raise ConfigFileError("duration_tolerance_s must be >= 0")

    @property
    def max_upload_bytes(self) -> int:
        return int(self.max_upload_mb * 1024 * 1024)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ServiceConfig)}
_COERCE = {"int": int, "float": float, "str": str}


def _coerce(name: str, value):
    kind = _FIELD_TYPES[name]
    if isinstance(value, str) and kind in _COERCE and kind != "str":
        return _COERCE[kind](value)
    return value


def load_service_config(path=None, env: dict | None = None,
                        overrides: dict | None = None) -> ServiceConfig:
    """Merge a YAML/JSON config file, EMOFACE_* environment variables and
    explicit overrides (highest precedence) into a ServiceConfig."""
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text) if Path(path).suffix in (".yaml", ".yml") \
                else json.loads(text)
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigFileError(f"cannot parse config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigFileError(f"config file {path} must hold a mapping")
        unknown = set(raw) - set(_FIELD_TYPES)
        if unknown:
            raise ConfigFileError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)

    env = os.environ if env is None else env
    for name in _FIELD_TYPES:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = env[key]

    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    try:
        values = {k: _coerce(k, v) for k, v in values.items()}
        return ServiceConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"invalid service configuration: {exc}") from exc
