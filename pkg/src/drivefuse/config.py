"""INI experiment configuration: file parsing, overrides, and echo output.

The file format is flat typed key=value pairs grouped into [data], [model],
and [training] sections. Command-line overrides (`--set key=value` or
`--set section.key=value`) always win over file values. Every run writes the
fully resolved configuration back out next to its artifacts, so any result
can be reproduced from its echo alone.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError
from .fusion_model import MethodVariant
from .harness import ExperimentConfig


def _int_tuple(raw: str) -> tuple[int, ...]:
    items = tuple(int(p) for p in raw.split(",") if p.strip())
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return items


def _opt_float(raw: str) -> float | None:
    return float(raw) if raw.strip() else None


def _variant(raw: str) -> MethodVariant:
    return MethodVariant.parse(raw)


# section -> key -> parser; keys map 1:1 onto ExperimentConfig fields
_SCHEMA: dict[str, dict[str, object]] = {
    "data": {
        "train_manifest": str,
        "test_manifest": str,
        "embedding_store": str,
        "scene_graphs": str,
        "pose_file": str,
        "detections_file": str,
        "sampling_interval_frames": int,
    },
    "model": {
        "variant": _variant,
        "hidden_widths": _int_tuple,
        "node_embedding_dim": int,
        "graph_encoding_dim": int,
        "min_triplet_score": _opt_float,
    },
    "training": {
        "seeds": _int_tuple,
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
    },
}

_KEY_SECTION = {key: section for section, keys in _SCHEMA.items() for key in keys}


def _set_field(config: ExperimentConfig, section: str, key: str, raw: str) -> None:
    parser = _SCHEMA[section][key]
    try:
        value = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None
    setattr(config, key, value)


def load_config(path) -> ExperimentConfig:
    """Parse an INI file into an ExperimentConfig; unknown sections or keys
    are errors, missing keys keep their defaults."""
    config = ExperimentConfig()
    if path is None:
        return config
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            _set_field(config, section, key, raw)
    return config


def apply_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply `key=value` / `section.key=value` pairs in order."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
            if section not in _SCHEMA or key not in _SCHEMA[section]:
                raise ConfigError(f"unknown override key {section}.{key}")
        elif key in _KEY_SECTION:
            section = _KEY_SECTION[key]
        else:
            raise ConfigError(f"unknown override key {key!r}")
        _set_field(config, section, key, raw)
    return config


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, MethodVariant):
        return value.name
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def config_text(config: ExperimentConfig, run_info: dict | None = None) -> str:
    """Render the fully resolved configuration as INI text."""
    lines = []
    if run_info:
        lines.append("[run]")
        lines.extend(f"{k} = {_format_value(v)}" for k, v in run_info.items())
        lines.append("")
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_format_value(getattr(config, key))}" for key in keys)
        lines.append("")
    return "\n".join(lines)


def write_config_echo(config: ExperimentConfig, path, run_info: dict | None = None) -> None:
    Path(path).write_text(config_text(config, run_info), encoding="utf-8")
