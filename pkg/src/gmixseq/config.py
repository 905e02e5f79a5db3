"""Plain-text run configuration.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Values are parsed as Python literals when possible (numbers,
booleans, None, tuples) and kept as strings otherwise. Keys may use dashes
or underscores interchangeably.
"""

from __future__ import annotations

import ast
import os
from pathlib import Path

SEED_ENV = "GMIXSEQ_SEED"


class ConfigError(ValueError):
    pass


def _norm(key: str) -> str:
    return key.strip().replace("-", "_")


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = _norm(key), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[key] = value
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def merge(defaults: dict, file_values: dict | None, flags: dict) -> dict:
    """flags > file > defaults; a flag left at None does not override."""
    out = dict(defaults)
    for source in (file_values or {}, flags):
        for key, value in source.items():
            key = _norm(key)
            if source is flags and value is None:
                continue
            out[key] = value
    return out


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return fallback
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc
