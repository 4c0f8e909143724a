"""Key-value text format used for configs, parameter files, and fit reports.

Format: one `key = value` per line, `#` starts a comment, blank lines
ignored. Vectors are comma-joined scalars. Floats print with 17 significant
digits so round-trips are byte-stable.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError


def format_float(x: float) -> str:
    return "%.17g" % float(x)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if isinstance(v, str):
        return v
    if isinstance(v, np.ndarray):
        return ",".join(format_value(x) for x in v.ravel())
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    raise TypeError(f"cannot serialize value of type {type(v).__name__}")


def dump_kv(pairs: dict, path=None) -> str:
    """Render a dict to the text format; optionally write it to `path`."""
    lines = [f"{k} = {format_value(v)}" for k, v in pairs.items()]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def parse_kv(text: str) -> dict[str, str]:
    """Parse the text format into a {key: raw string value} dict."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_kv(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_kv(fh.read())


def config_hash(pairs: dict) -> str:
    """Stable short hash of a resolved configuration."""
    canon = dump_kv(dict(sorted(pairs.items())))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
