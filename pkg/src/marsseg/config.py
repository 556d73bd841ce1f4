"""Training configuration and its flat ``key = value`` text form.

Every field is addressed by a dotted key (``optim.lr``, ``network.encoder.stage_channels``).
Lists are comma separated, booleans are ``true``/``false`` and ``none`` marks an unset
optional. ``network.preset = micro|full`` rebuilds the network section from
``network.num_classes``, ``network.encoder.stage_channels`` and
``network.sppm.pyramid_sizes`` before the remaining network keys apply.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from .data import AugmentPolicy
from .errors import ConfigError
from .losses import LossConfig
from .network import NetworkConfig
from .optim import OptimConfig


@dataclass
class TrainSchedule:
    batch_size: int = 8
    epochs: int = 100
    max_steps: Optional[int] = None
    validate_every: int = 1
    val_source: str = "holdout"  # "holdout" carves val_fraction from train; "train" reuses train
    adaptive_weights: bool = True
    seed: int = 0
    checkpoint: Optional[str] = None
    history: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.validate_every < 1:
            raise ValueError("batch_size, epochs and validate_every must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.val_source not in ("holdout", "train"):
            raise ValueError("val_source must be 'holdout' or 'train'")


@dataclass
class DataConfig:
    root: Optional[str] = None
    split_ratio: float = 0.8
    val_fraction: float = 0.1

    def __post_init__(self):
        if not 0 <= self.split_ratio <= 1 or not 0 <= self.val_fraction < 1:
            raise ValueError("split_ratio must be in [0,1] and val_fraction in [0,1)")


@dataclass
class TrainConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig.micro)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)


PATH_KEYS = ("data.root", "train.checkpoint", "train.history")


# -- flattening -----------------------------------------------------------------

def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flatten(obj, prefix: str = "") -> Dict[str, str]:
    out = {}
    for f in dataclasses.fields(obj):
        key = f"{prefix}{f.name}"
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        elif isinstance(value, tuple) and value and dataclasses.is_dataclass(value[0]):
            for i, item in enumerate(value):
                out.update(flatten(item, f"{key}.{i}."))
        else:
            out[key] = _format(value)
    return out


def _strip_optional(hint):
    if typing.get_origin(hint) is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return args[0], True
    return hint, False


def _parse_scalar(text: str, kind, key: str):
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def _parse(text: str, hint, key: str):
    hint, optional = _strip_optional(hint)
    if optional and text.strip().lower() == "none":
        return None
    if typing.get_origin(hint) in (tuple, Tuple):
        args = typing.get_args(hint)
        elem = args[0] if args else str
        parts = [p for p in text.split(",") if p.strip()]
        return tuple(_parse_scalar(p, elem, key) for p in parts)
    return _parse_scalar(text, hint, key)


def _build(cls, flat: Dict[str, str], base, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.name}"
        hint = hints[f.name]
        current = getattr(base, f.name)
        if dataclasses.is_dataclass(current):
            kwargs[f.name] = _build(type(current), flat, current, key + ".")
        elif isinstance(current, tuple) and current and dataclasses.is_dataclass(current[0]):
            kwargs[f.name] = tuple(
                _build(type(item), flat, item, f"{key}.{i}.") for i, item in enumerate(current)
            )
        elif key in flat:
            kwargs[f.name] = _parse(flat[key], hint, key)
        else:
            kwargs[f.name] = current
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def _preset_network(flat: Dict[str, str]) -> NetworkConfig:
    preset = flat.pop("network.preset").strip()
    hints = {
        "network.num_classes": int,
        "network.encoder.stage_channels": Tuple[int, ...],
        "network.sppm.pyramid_sizes": Tuple[int, ...],
    }
    values = {k: _parse(flat[k], h, k) for k, h in hints.items() if k in flat}
    n = values.get("network.num_classes", 4)
    if preset == "micro":
        kwargs = {}
        if "network.encoder.stage_channels" in values:
            kwargs["stage_channels"] = values["network.encoder.stage_channels"]
        if "network.sppm.pyramid_sizes" in values:
            kwargs["pyramid_sizes"] = values["network.sppm.pyramid_sizes"]
        return NetworkConfig.micro(n, **kwargs)
    if preset == "full":
        return NetworkConfig.full(n)
    raise ConfigError(f"network.preset: unknown preset {preset!r} (use micro or full)")


def from_flat(flat: Dict[str, str], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Build a :class:`TrainConfig` from string values; unknown keys raise ``ConfigError``."""
    flat = dict(flat)
    base = base or TrainConfig()
    if "network.preset" in flat:
        try:
            network = _preset_network(flat)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"network: {exc}") from exc
        base = dataclasses.replace(base, network=network)
    known = set(flatten(base))
    for key in flat:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    return _build(TrainConfig, flat, base)


def parse_text(text: str, source: str = "<config>") -> Dict[str, str]:
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        flat[key] = value
    return flat


def to_text(cfg: TrainConfig) -> str:
    """Canonical form: one ``key = value`` line per field, sorted by key."""
    return "".join(f"{k} = {v}\n" for k, v in sorted(flatten(cfg).items()))


def from_text(text: str) -> TrainConfig:
    return from_flat(parse_text(text))


def load_config(path, overrides: Optional[Dict[str, str]] = None) -> TrainConfig:
    """Read a config file, apply ``overrides`` (which win), and resolve
    relative paths against the file's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    flat = parse_text(text, str(path))
    flat.update(overrides or {})
    for key in PATH_KEYS:
        if key in flat and flat[key].strip().lower() != "none":
            p = Path(flat[key].strip())
            flat[key] = str(p if p.is_absolute() else (path.parent / p).resolve())
    return from_flat(flat)
