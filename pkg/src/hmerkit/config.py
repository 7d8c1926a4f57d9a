"""Flat ``key = value`` config files mapped onto nested dataclasses.

Keys are dotted paths into the dataclass tree, e.g. ``model.backbone.growth_rate = 12``.
Values are Python literals (numbers, booleans, tuples, quoted strings); a bare
word that is not a literal is read as a string. ``#`` starts a comment.
"""
from __future__ import annotations

import ast
import dataclasses
import hashlib
from pathlib import Path
from typing import Any

from .errors import ConfigError


def flatten(obj: Any, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def dumps(obj: Any) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in flatten(obj).items())


def config_hash(obj: Any) -> str:
    return hashlib.sha256(dumps(obj).encode()).hexdigest()


def _parse_value(text: str) -> Any:
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        values[key] = _parse_value(value)
    return values


def apply(obj: Any, values: dict[str, Any]) -> Any:
    """Return a copy of dataclass ``obj`` with dotted-key overrides applied."""
    known = flatten(obj)
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return _rebuild(obj, values, "")


def _rebuild(obj: Any, values: dict[str, Any], prefix: str) -> Any:
    changes = {}
    for f in dataclasses.fields(obj):
        current = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(current):
            changes[f.name] = _rebuild(current, values, key + ".")
        elif key in values:
            changes[f.name] = _coerce(key, current, values[key])
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def _coerce(key: str, current: Any, value: Any) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int) and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(current, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(current, str):
        return str(value)
    if isinstance(current, tuple) and isinstance(value, (tuple, list)):
        return tuple(value)
    raise ConfigError(f"{key}: cannot use {value!r} where {type(current).__name__} is expected")


def load(path: str | Path, base: Any) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return apply(base, parse(text))
