"""Flat key-value configuration files.

Format::

    # comment
    chirp.f_start = 22e9
    geometry.layout_mode = ARC
    geometry.tx.0 = 0.0 -1.5 0.4375

Keys are dotted paths; the first component is the section.  Values are kept
as strings and converted on access.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError


_MISSING = object()


class Config(dict):
    """A ``dict`` of dotted keys to raw string values with typed getters."""

    def section(self, prefix: str) -> "Config":
        p = prefix.rstrip(".") + "."
        return Config({k[len(p):]: v for k, v in self.items() if k.startswith(p)})

    def _get(self, key, default, conv):
        if key not in self:
            if default is _MISSING:
                raise ConfigError(f"missing config key '{key}'")
            return default
        try:
            return conv(self[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for '{key}': {self[key]!r}") from exc

    def get_float(self, key: str, default=_MISSING) -> float:
        return self._get(key, default, float)

    def get_int(self, key: str, default=_MISSING) -> int:
        return self._get(key, default, _parse_int)

    def get_str(self, key: str, default=_MISSING) -> str:
        return self._get(key, default, str)

    def get_bool(self, key: str, default=_MISSING) -> bool:
        return self._get(key, default, _parse_bool)

    def get_vector(self, key: str, default=_MISSING) -> np.ndarray:
        return self._get(key, default, lambda s: np.array([float(x) for x in s.replace(",", " ").split()]))



def _parse_int(s: str) -> int:
    v = float(s)
    if not v.is_integer():
        raise ValueError(s)
    return int(v)


def _parse_bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def parse_config(text: str) -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"line {lineno}: invalid key {key!r}")
        cfg[key] = value
    return cfg


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(items: Mapping[str, object] | Iterable[tuple[str, object]]) -> str:
    """Render key-value pairs; floats use ``repr`` so they round-trip exactly."""
    pairs = items.items() if isinstance(items, Mapping) else items
    lines = []
    for key, value in pairs:
        if isinstance(value, (list, tuple, np.ndarray)):
            value = " ".join(repr(float(v)) for v in np.ravel(value))
        elif isinstance(value, (float, np.floating)):
            value = repr(float(value))
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
