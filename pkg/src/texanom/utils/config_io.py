"""TOML run-configuration files."""

import hashlib
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Union

import tomli_w

from ..models.config import RunConfig
from ..models.errors import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FROZEN_CONFIG_NAME = "config.frozen.toml"


def _merge(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(
    path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Relative paths inside the file resolve against the file's directory.
    ``overrides`` is a nested dict merged over the file contents.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ConfigurationError: If the file is not valid TOML.
        pydantic.ValidationError: If a field value is invalid.
    """
    path = Path(path)
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: invalid TOML ({e})") from e
    if overrides:
        data = _merge(data, overrides)
    return RunConfig.model_validate(data, context={"base_dir": path.resolve().parent})


def config_document(cfg: RunConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="json", exclude_none=True)


def write_run_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    """Write the fully resolved configuration; loading it back gives an equal RunConfig."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(config_document(cfg), f)
    return path


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical TOML rendering of ``cfg``."""
    return hashlib.sha256(tomli_w.dumps(config_document(cfg)).encode("utf-8")).hexdigest()
