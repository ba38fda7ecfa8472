"""Plain-text ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Values stay strings here; each
config dataclass converts the keys it knows about.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def format_kv(items: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def as_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def as_int_list(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"not an integer list: {value!r}") from exc
