"""JSON run-config loading, dotted-path overrides, field-path errors.

A run config is one JSON object with up to three sections::

    {"model": {...ModelConfig fields...},
     "data":  {...DataConfig fields...},
     "train": {...TrainConfig fields...}}

Every CLI subcommand reads the sections it needs and applies ``--set
section.field=value`` overrides (values parsed as JSON, falling back to
strings). Validation failures name the offending field path.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .dataset import DataConfig
from .model import ModelConfig
from .train import TrainConfig

SECTIONS = {"model": ModelConfig, "data": DataConfig, "train": TrainConfig}


class ConfigError(ValueError):
    pass


def load_run_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config: file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON in {p}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    for key in raw:
        if key not in SECTIONS:
            raise ConfigError(f"config.{key}: unknown section (expected one of {sorted(SECTIONS)})")
    return raw


def parse_override(expr: str) -> tuple[str, str, object]:
    if "=" not in expr:
        raise ConfigError(f"--set {expr!r}: expected section.field=value")
    key, _, value = expr.partition("=")
    if "." not in key:
        raise ConfigError(f"--set {expr!r}: key must be section.field")
    section, _, field = key.partition(".")
    if section not in SECTIONS:
        raise ConfigError(f"--set {key}: unknown section {section!r}")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value  # bare strings are fine
    return section, field, parsed


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    out = {k: dict(v) for k, v in raw.items()}
    for expr in overrides or []:
        section, field, value = parse_override(expr)
        out.setdefault(section, {})[field] = value
    return out


def _build(section: str, raw: dict):
    cls = SECTIONS[section]
    data = raw.get(section, {})
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field "
                              f"(known: {', '.join(sorted(known))})")
    try:
        cfg = cls.from_dict(data) if hasattr(cls, "from_dict") else cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e
    try:
        cfg.validate()
    except ValueError as e:
        msg = str(e)
        raise ConfigError(msg if msg.startswith(f"{section}.") else f"{section}: {msg}") from e
    return cfg


def model_config(raw: dict) -> ModelConfig:
    return _build("model", raw)


def data_config(raw: dict) -> DataConfig:
    return _build("data", raw)


def train_config(raw: dict) -> TrainConfig:
    return _build("train", raw)


def schema_reference() -> str:
    """Human-readable field listing per section, generated from the dataclasses."""
    lines = []
    for section, cls in SECTIONS.items():
        lines.append(f"[{section}]")
        for f in dataclasses.fields(cls):
            default = f.default
            if default is dataclasses.MISSING and f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
                default = f.default_factory()  # type: ignore[misc]
            lines.append(f"  {section}.{f.name} (default: {default!r})")
        lines.append("")
    return "\n".join(lines)
