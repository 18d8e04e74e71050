"""Flat ``key = value`` configuration files with ``#`` comments."""
from __future__ import annotations

from typing import Callable, Collection, Iterable


class ConfigError(ValueError):
    """A config file could not be parsed; the message names the offending key or line."""


def parse_kv(text: str, allowed: Collection[str] | Callable[[str], bool] | None = None,
             source: str = "<config>", string_keys: Iterable[str] | Callable[[str], bool] = ()
             ) -> dict[str, float | str]:
    """Parse ``key = value`` lines.

    Values are converted to float unless the key is listed in ``string_keys``.
    Unknown keys (when ``allowed`` is given), duplicates and unparsable
    numbers raise :class:`ConfigError`.
    """
    is_allowed = allowed if callable(allowed) or allowed is None else (lambda k: k in allowed)
    is_string = string_keys if callable(string_keys) else (lambda k, s=set(string_keys): k in s)
    out: dict[str, float | str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if is_allowed is not None and not is_allowed(key):
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if is_string(key):
            out[key] = value
            continue
        try:
            out[key] = float(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: key {key!r} has non-numeric value {value!r}") from None
    return out


def format_kv(values: dict, header: str = "") -> str:
    lines = [f"# {h}" if h else "#" for h in header.splitlines()] if header else []
    for k, v in values.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = format(v, ".17g")
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
