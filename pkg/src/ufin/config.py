"""Run configuration: one key=value file, overridden by command-line flags.

Precedence is flags > file > defaults.  Keys are dotted (``train.lr``);
unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from ufin.errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 42

    # model
    model_d_v: int = 64
    model_d: int = 16
    model_d_a: int = 16
    model_n_u: int = 7
    model_n_o: int = 7
    model_k: Optional[int] = None
    model_mode: str = "t+f"
    model_theorem_mode: bool = True

    # training
    train_lr: float = 1e-3
    train_weight_decay: float = 1e-5
    train_batch_size: int = 256
    train_epochs: int = 20
    train_patience: int = 5
    # teachers see raw id embeddings and need a hotter schedule at desk scale
    train_teacher_lr: float = 2e-2
    train_teacher_epochs: int = 30
    train_teacher_patience: int = 6

    # prompt
    prompt_variant: str = "base"
    prompt_drop_fields: str = ""  # comma-separated

    # encoder
    encoder_backend: str = "hash"  # hash | cache
    encoder_hash_seed: int = 17

    # synthetic benchmark
    synth_domains: int = 3
    synth_users: int = 2000
    synth_items: int = 1000
    synth_interactions: int = 50000
    synth_topics: int = 4
    synth_vocab: int = 120
    synth_persona_blend: float = 0.15  # matches SynthConfig defaults
    synth_mixture_blend: float = 0.25
    synth_affinity_weight: float = 6.0
    synth_context_weight: float = 0.8
    synth_noise: float = 0.0
    synth_label_mode: str = "bernoulli"

    def drop_fields(self) -> tuple[str, ...]:
        return tuple(f for f in self.prompt_drop_fields.split(",") if f)


def _config_key(attr: str) -> str:
    return attr.replace("_", ".", 1) if "_" in attr and not attr == "seed" else attr


KEY_TO_ATTR = {_config_key(f.name): f.name for f in fields(RunConfig)}


def _parse_value(attr: str, raw: str):
    raw = raw.strip()
    hint = RunConfig.__dataclass_fields__[attr].type
    if attr == "model_k":
        return None if raw.lower() in ("none", "auto", "") else int(raw)
    if hint == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{_config_key(attr)}: expected a boolean, got {raw!r}")
    try:
        if hint == "int":
            return int(raw)
        if hint == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{_config_key(attr)}: cannot parse {raw!r} as {hint}") from None
    return raw


def load_config_file(path) -> dict[str, object]:
    """Parse ``key = value`` lines into attribute updates."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    updates: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in KEY_TO_ATTR:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        attr = KEY_TO_ATTR[key]
        updates[attr] = _parse_value(attr, raw)
    return updates


def resolve(file_path=None, overrides: Optional[dict[str, object]] = None) -> RunConfig:
    """Defaults, then file values, then non-None overrides."""
    cfg = RunConfig()
    if file_path is not None:
        for attr, value in load_config_file(file_path).items():
            setattr(cfg, attr, value)
    for attr, value in (overrides or {}).items():
        if value is not None:
            if attr not in RunConfig.__dataclass_fields__:
                raise ConfigError(f"unknown config attribute {attr!r}")
            setattr(cfg, attr, value)
    return cfg
