"""key=value config files and typed overrides for the dataclass configs."""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .nn import ConfigError


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    try:
        return parse_kv(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_kv(values: dict) -> str:
    return "".join(f"{k}={'' if v is None else v}\n" for k, v in values.items())


def _convert(raw: str, kind, key: str):
    origin = typing.get_origin(kind)
    if origin is typing.Union or str(origin) == "<class 'types.UnionType'>":
        args = [a for a in typing.get_args(kind) if a is not type(None)]
        if raw.lower() in ("", "none", "null"):
            return None
        return _convert(raw, args[0], key)
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def apply(cls, values: dict[str, str], base=None):
    """Build ``cls`` from string values; keys not in ``cls`` are ignored.

    Start from ``base`` (an instance) when given, otherwise from the defaults.
    """
    hints = typing.get_type_hints(cls)
    kwargs = dataclasses.asdict(base) if base is not None else {}
    for f in dataclasses.fields(cls):
        if f.name in values:
            kwargs[f.name] = _convert(values[f.name], hints[f.name], f.name)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def unknown_keys(values: dict, *classes) -> list[str]:
    known = {f.name for c in classes for f in dataclasses.fields(c)}
    return sorted(k for k in values if k not in known)
