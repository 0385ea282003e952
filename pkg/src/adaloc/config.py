"""Plain-text ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Values are parsed by a schema
(key -> parser); keys outside the schema are rejected by name.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Mapping

from .errors import ConfigError


def parse_points(text: str) -> tuple[tuple[float, float], ...]:
    """``"0,0; 10,0; 10,10"`` -> ((0, 0), (10, 0), (10, 10))."""
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        xy = [float(v) for v in chunk.split(",")]
        if len(xy) != 2:
            raise ConfigError(f"waypoint {chunk!r} is not an x,y pair")
        pts.append((xy[0], xy[1]))
    return tuple(pts)


def format_points(pts) -> str:
    return "; ".join(f"{x:g},{y:g}" for x, y in pts)


def parse_intervals(text: str) -> tuple[tuple[float, float], ...]:
    """``"0.2-0.45, 0.65-0.85"`` -> ((0.2, 0.45), (0.65, 0.85)); ``none`` -> ()."""
    text = text.strip()
    if text.lower() in ("", "none"):
        return ()
    out = []
    for chunk in text.split(","):
        lo, sep, hi = chunk.strip().partition("-")
        if not sep:
            raise ConfigError(f"interval {chunk!r} must look like a-b")
        out.append((float(lo), float(hi)))
    return tuple(out)


def format_intervals(iv) -> str:
    return ", ".join(f"{a:g}-{b:g}" for a, b in iv) if iv else "none"


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on", "+"):
        return True
    if t in ("0", "false", "no", "off", "-"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def read_pairs(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_pairs(pairs: Mapping[str, str], schema: Mapping[str, Callable[[str], object]],
                source: str = "config") -> dict[str, object]:
    out = {}
    for key, value in pairs.items():
        if key not in schema:
            raise ConfigError(f"{source}: unknown key {key!r}")
        try:
            out[key] = schema[key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {value!r} ({exc})") from exc
    return out


def load(path, schema) -> dict[str, object]:
    return parse_pairs(read_pairs(path), schema, str(path))
