"""Flat key-value config text: `section.key = value` lines, '#' comments.

Values parse as bool (true/false/on/off), int, float, comma list, or bare
string. The same syntax powers CLI --override flags and matrix axis values.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "on": True, "yes": True, "false": False, "off": False, "no": False}


def parse_value(text: str):
    s = text.strip()
    if "," in s:
        return [parse_value(part) for part in s.split(",") if part.strip()]
    low = s.lower()
    if low in _BOOL:
        return _BOOL[low]
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def parse_kv_text(text: str) -> dict[str, object]:
    mapping: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        mapping[key] = parse_value(value)
    return mapping


def load_kv_file(path: str | Path) -> dict[str, object]:
    return parse_kv_text(Path(path).read_text())


def format_kv(mapping: dict[str, object]) -> str:
    lines = [f"{key} = {format_value(value)}" for key, value in sorted(mapping.items())]
    return "\n".join(lines) + "\n"


def apply_overrides(mapping: dict[str, object], overrides: list[str]) -> dict[str, object]:
    out = dict(mapping)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = parse_value(value)
    return out
