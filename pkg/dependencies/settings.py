# Dependency to build the run configuration
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import yaml
from pydantic import ValidationError

from models import RunConfig
from utils.errors import ConfigError


def parse_override(text: str) -> Dict[str, Any]:
    """Turn ``a.b=value`` into ``{"a": {"b": value}}`` with the value read as a YAML scalar."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}")
    value = yaml.safe_load(raw) if raw.strip() else raw
    nested: Dict[str, Any] = {}
    cursor = nested
    parts = key.strip().split(".")
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return nested


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_yaml(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {str(e)}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def get_run_config(config_path: Optional[Path] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """
    Build the run configuration.

    Precedence, lowest first: defaults, HUAPA_* environment, YAML file, overrides.
    """
    data: Dict[str, Any] = load_yaml(Path(config_path)) if config_path is not None else {}
    for text in overrides:
        data = _merge(data, parse_override(text))
    try:
        return RunConfig(**data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}")


def require_paths(config: RunConfig, *fields: str) -> None:
    """Fail before any compute when a named path is unset or missing."""
    for name in fields:
        path = getattr(config, name)
        if path is None:
            raise ConfigError(f"{name} is not set")
        if not Path(path).exists():
            raise ConfigError(f"{name}: path not found: {path}")
