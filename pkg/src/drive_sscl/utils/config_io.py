"""
Run configuration files (TOML) and command-line overrides.
"""

import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from pydantic import ValidationError

from ..exceptions import ConfigurationError, FileError
from ..models import RunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def deep_merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``overrides`` into ``base``; ``None`` overrides are ignored."""
    merged: Dict[str, Any] = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Invalid TOML in {path}: {e}")


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        path: TOML file with ``[data] [graph] [model] [train] [augment] [eval]`` sections
        overrides: Nested mapping applied on top of the file (flags win)

    Returns:
        Validated RunConfig
    """
    raw = read_config_file(path) if path else {}
    merged = deep_merge(raw, overrides or {})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}")
