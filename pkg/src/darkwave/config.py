"""Run-configuration plumbing: strict key-checked config files and the
resolved-config echo written next to every output, which makes any run
reproducible from its artifacts alone."""

from __future__ import annotations

from pathlib import Path

from .container import read_json, write_json
from .errors import ConfigError


def resolve_config(defaults: dict, config_path: str | None, cli_values: dict) -> dict:
    """Merge defaults <- config file <- explicit CLI values.

    Unknown keys in the config file are rejected (typos should fail
    loudly, not silently fall back to defaults). CLI values equal to
    None mean "not given on the command line".
    """
    resolved = dict(defaults)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        data = read_json(path)
        if not isinstance(data, dict):
            raise ConfigError("config", "config file must hold a JSON object")
        for key, value in data.items():
            if key not in defaults:
                raise ConfigError(key, "unknown configuration key")
            resolved[key] = value
    for key, value in cli_values.items():
        if value is not None:
            if key not in defaults:
                raise ConfigError(key, "unknown configuration key")
            resolved[key] = value
    return resolved


def write_config_echo(target: Path | str, resolved: dict) -> Path:
    """Drop ``<target>.config.json`` (file outputs) or
    ``<target>/config_echo.json`` (directory outputs)."""
    target = Path(target)
    if target.suffix and not target.is_dir():
        echo = target.parent / (target.name + ".config.json")
    else:
        target.mkdir(parents=True, exist_ok=True)
        echo = target / "config_echo.json"
    write_json(echo, resolved)
    return echo
