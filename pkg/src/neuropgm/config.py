"""Line-oriented configuration files.

Grammar::

    # comment (also ';')
    [section]
    key = value

Values are typed by shape: integer, float, boolean (true/false), a
comma-separated list of scalars, or a bare string.  Keys before any
section header live in the "" section.  Duplicate keys and — when a
schema is supplied — unknown keys are rejected with line numbers.
"""

import os
import re

from .errors import ConfigError

__all__ = ["parse_config", "parse_config_text"]

_INT_RE = re.compile(r"^[+-]?\d+$")
_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.-]+)\]$")
_KEY_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


def _typed_scalar(text):
    text = text.strip()
    if _INT_RE.match(text):
        return int(text)
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return float(text)
    except ValueError:
        return text


def _typed_value(text):
    text = text.strip()
    if "," in text:
        return [_typed_scalar(part) for part in text.split(",")]
    return _typed_scalar(text)


def parse_config_text(text, schema=None, name="<config>"):
    """Parse config source text into {section: {key: value}}.

    Parameters
    ----------
    text : str
    schema : dict or None
        Optional {section: iterable of known keys}.  Sections or keys
        outside the schema raise ConfigError naming the line.
    """
    tree = {}
    seen_lines = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1)
            tree.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(
                f"{name}:{lineno}: expected 'key = value' or '[section]', "
                f"got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"{name}:{lineno}: bad key {key!r}")
        if (section, key) in seen_lines:
            raise ConfigError(
                f"{name}:{lineno}: duplicate key {key!r} in section "
                f"[{section}] (first defined at line "
                f"{seen_lines[(section, key)]})")
        seen_lines[(section, key)] = lineno
        if schema is not None:
            if section not in schema:
                raise ConfigError(
                    f"{name}:{lineno}: unknown section [{section}]")
            if key not in schema[section]:
                raise ConfigError(
                    f"{name}:{lineno}: unknown key {key!r} in section "
                    f"[{section}]")
        tree.setdefault(section, {})[key] = _typed_value(value)
    return tree


def parse_config(path, schema=None):
    """Parse a config file from disk. See :func:`parse_config_text`."""
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), schema=schema, name=path)
