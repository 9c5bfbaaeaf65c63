"""Flat key-value config files with CLI overrides.

Format: one `key = value` per line, '#' comments, blank lines ignored.
Precedence: dataclass defaults < file values < explicit overrides.
Unknown keys are rejected by name.
"""

from __future__ import annotations

import dataclasses

from .errors import ConfigError


def parse_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            values[key.strip()] = val.strip()
    return values


def _coerce(key, raw, target_type):
    if isinstance(raw, target_type) and not isinstance(raw, str):
        return raw
    try:
        if target_type is bool:
            if isinstance(raw, bool):
                return raw
            s = str(raw).lower()
            if s in ("true", "1", "yes"):
                return True
            if s in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"config key {key!r}: cannot parse {raw!r} as {target_type.__name__}")


def build_config(cls, file_path=None, overrides=None):
    """Instantiate dataclass `cls` from defaults, an optional file, and overrides."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    merged = {}
    for source in (parse_config_file(file_path) if file_path else {},
                   overrides or {}):
        for key, raw in source.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
            merged[key] = _coerce(key, raw, _field_type(fields[key]))
    return cls(**merged)


def _field_type(f):
    # dataclass field types may be strings under `from __future__ import annotations`
    t = f.type
    if isinstance(t, str):
        return {"int": int, "float": float, "str": str, "bool": bool}.get(t, str)
    return t
