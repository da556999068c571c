"""Plain-text key=value configuration files."""
from __future__ import annotations


class ConfigError(ValueError):
    pass


def parse_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_kv(path, kv: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in kv.items():
            f.write(f"{key}={value}\n")


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")
