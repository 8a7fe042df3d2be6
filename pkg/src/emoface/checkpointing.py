"""Self-describing checkpoint container shared by all trainable models."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else dict(cfg)


def _normalized(value):
    if isinstance(value, (list, tuple)):
        return tuple(_normalized(v) for v in value)
    if isinstance(value, dict):
        return {k: _normalized(v) for k, v in value.items()}
    return value


def capture_rng(np_rng: np.random.Generator | None = None) -> dict:
    states = {"torch": torch.get_rng_state()}
    if np_rng is not None:
        states["numpy"] = np_rng.bit_generator.state
    return states


def restore_rng(states: dict, np_rng: np.random.Generator | None = None):
    torch.set_rng_state(states["torch"])
    if np_rng is not None and "numpy" in states:
        np_rng.bit_generator.state = states["numpy"]


def save_checkpoint(path, kind: str, config, modules: dict, optimizers: dict | None = None,
                    extra: dict | None = None, rng: dict | None = None):
    """Write a versioned container: config record + named parameter blobs."""
    record = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config_dict(config),
        "modules": {name: m.state_dict() for name, m in modules.items()},
        "optimizers": {name: o.state_dict() for name, o in (optimizers or {}).items()},
        "extra": extra or {},
        "rng": rng,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(record, path)
    return path


def load_checkpoint(path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        record = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(record, dict):
        raise CheckpointError(f"{path} does not hold a checkpoint record")
    version = record.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")
    if kind is not None and record.get("kind") != kind:
        raise CheckpointError(
            f"{path}: checkpoint kind {record.get('kind')!r} does not match expected {kind!r}"
        )
    return record


def check_config(record: dict, cfg, ignore: tuple[str, ...] = ()) -> None:
    """Validate that a loaded checkpoint was produced under a compatible config."""
    saved = record.get("config", {})
    current = config_dict(cfg)
    mismatched = [
        k for k in current
        if k not in ignore and _normalized(saved.get(k)) != _normalized(current[k])
    ]
    if mismatched:
        detail = ", ".join(f"{k}: saved={saved.get(k)!r} vs current={current[k]!r}"
                           for k in mismatched)
        raise CheckpointError(f"incompatible checkpoint config ({detail})")
