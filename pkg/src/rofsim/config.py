"""JSON scenario configs: strict parsing, dotted-path access and schema export."""

from __future__ import annotations

import dataclasses
import json
import typing
from pathlib import Path

from .errors import ConfigError


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def to_dict(obj):
    """Plain JSON-ready representation of a (nested) config dataclass."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {type(value).__name__}", path)
        (item,) = typing.get_args(tp)[:1]
        return tuple(_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {type(value).__name__}", path)
        return dict(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    raise ConfigError(f"unsupported field type {tp}", path)


def from_dict(cls, data, path: str = ""):
    """Build ``cls`` from ``data``; unknown keys and bad types raise :class:`ConfigError`."""
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path or None)
    hints = _hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}; valid keys: {', '.join(names)}",
                          _join(path, unknown[0]))
    kwargs = {k: _coerce(hints[k], v, _join(path, k)) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if not path:
            raise
        raise type(exc)(exc.msg, _join(path, exc.path or "")) from None


def valid_paths(cls, prefix: str = "") -> list[str]:
    out = []
    hints = _hints(cls)
    for f in dataclasses.fields(cls):
        p = _join(prefix, f.name)
        if dataclasses.is_dataclass(hints[f.name]):
            out.extend(valid_paths(hints[f.name], p))
        else:
            out.append(p)
    return out


def get_path(obj, path: str):
    for part in path.split("."):
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown parameter path; valid paths: {', '.join(valid_paths(type(obj)))}", path)
        obj = getattr(obj, part)
    return obj


def set_path(obj, path: str, value):
    """Return a copy of ``obj`` with the dotted ``path`` replaced (validated)."""
    d = to_dict(obj)
    node = d
    parts = path.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown parameter path; valid paths: {', '.join(valid_paths(type(obj)))}", path)
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown parameter path; valid paths: {', '.join(valid_paths(type(obj)))}", path)
    node[parts[-1]] = value
    return from_dict(type(obj), d)


def apply_overrides(obj, overrides: dict):
    """Apply ``{"dotted.path": value}`` overrides in order."""
    for path, value in overrides.items():
        obj = set_path(obj, path, value)
    return obj


def _schema_for(tp):
    if dataclasses.is_dataclass(tp):
        hints = _hints(tp)
        props = {}
        for f in dataclasses.fields(tp):
            s = _schema_for(hints[f.name])
            default = f.default if f.default is not dataclasses.MISSING else (
                f.default_factory() if f.default_factory is not dataclasses.MISSING else None)
            if not dataclasses.is_dataclass(hints[f.name]) and default is not None:
                s["default"] = to_dict(default)
            props[f.name] = s
        out = {"type": "object", "properties": props, "additionalProperties": False}
        if tp.__doc__ and not tp.__doc__.startswith(tp.__name__ + "("):
            out["description"] = " ".join(tp.__doc__.split())
        return out
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        return {"type": "array", "items": _schema_for(typing.get_args(tp)[0])}
    if tp is dict or origin is dict:
        return {"type": "object"}
    return {bool: {"type": "boolean"}, int: {"type": "integer"}, float: {"type": "number"},
            str: {"type": "string"}}[tp]


def json_schema(cls) -> dict:
    s = _schema_for(cls)
    s["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    s["title"] = cls.__name__
    return s


def dumps(obj) -> str:
    return json.dumps(to_dict(obj), indent=2, sort_keys=False) + "\n"


def load_scenario(path):
    from .link import Scenario

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return from_dict(Scenario, data)


def save(obj, path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")
