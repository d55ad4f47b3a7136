"""Flat key=value serialization for run configurations.

Every run writes its fully resolved configuration (all defaults filled in) so
any run is reproducible from that file alone. The schema is versioned via the
``config_version`` key.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import get_args, get_origin

CONFIG_VERSION = 1


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(text: str, field_type):
    origin = get_origin(field_type)
    if field_type is bool:
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    if field_type is int:
        return int(text)
    if field_type is float:
        return float(text)
    if field_type is str:
        return text
    if origin is tuple:
        if not text:
            return ()
        item_type = get_args(field_type)[0]
        return tuple(_parse_value(item.strip(), item_type) for item in text.split(","))
    raise TypeError(f"unsupported config field type: {field_type}")


def config_to_text(config) -> str:
    lines = [f"config_version = {CONFIG_VERSION}"]
    for f in dataclasses.fields(config):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def write_config(config, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_to_text(config))
    return path


def parse_config_text(text: str, config_cls):
    # field annotations are strings under `from __future__ import annotations`
    hints = typing.get_type_hints(config_cls)
    known = {f.name for f in dataclasses.fields(config_cls)}
    values = {}
    version = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "config_version":
            version = int(val)
            continue
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(val, hints[key])
    if version is None:
        raise ValueError("missing config_version")
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config_version {version}, expected {CONFIG_VERSION}")
    return config_cls(**values)


def read_config(path: str | Path, config_cls):
    return parse_config_text(Path(path).read_text(), config_cls)
