"""Flat ``key = value`` configuration files.

One setting per line, ``#`` comments and blank lines allowed.  Consumers
validate their own key sets strictly: unknown keys are a hard error so
typos never pass silently.
"""

from __future__ import annotations

from .errors import ConfigError

__all__ = ["parse_kv_file", "KeyReader"]


def parse_kv_file(path) -> dict:
    """Read a flat key = value file into a string-to-string mapping."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or not value:
                raise ConfigError(f"{path}:{lineno}: empty key or value")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


class KeyReader:
    """Strict typed access to a parsed mapping; tracks unconsumed keys."""

    _REQUIRED = object()

    def __init__(self, mapping, source=""):
        self._map = dict(mapping)
        self._source = source

    def _pull(self, key, default):
        if key in self._map:
            return self._map.pop(key)
        if default is self._REQUIRED:
            raise ConfigError(f"{self._source}: missing required key {key!r}")
        return default

    def _convert(self, key, raw, conv, label):
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self._source}: key {key!r}: expected {label} ({exc})") from exc

    def get_int(self, key, default=_REQUIRED):
        raw = self._pull(key, default)
        if not isinstance(raw, str):
            return raw
        return self._convert(key, raw, int, "an integer")

    def get_float(self, key, default=_REQUIRED):
        raw = self._pull(key, default)
        if not isinstance(raw, str):
            return raw
        return self._convert(key, raw, float, "a number")

    def get_bool(self, key, default=_REQUIRED):
        raw = self._pull(key, default)
        if not isinstance(raw, str):
            return raw
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{self._source}: key {key!r}: expected true/false, got {raw!r}")

    def get_choice(self, key, choices, default=_REQUIRED):
        raw = self._pull(key, default)
        if not isinstance(raw, str):
            return raw
        if raw not in choices:
            raise ConfigError(f"{self._source}: key {key!r}: must be one of {sorted(choices)}")
        return raw

    def finish(self):
        """Reject any keys nobody consumed."""
        if self._map:
            unknown = ", ".join(sorted(self._map))
            raise ConfigError(f"{self._source}: unknown keys: {unknown}")
