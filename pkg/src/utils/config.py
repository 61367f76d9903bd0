#!/usr/bin/env python3
"""
Run-config loading: YAML/JSON/TOML files, --param overrides and environment.

Precedence: file < environment < command line.
"""

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from utils.errors import ValidationError

load_dotenv()

ENV_WORKERS = "FBM_WORKERS"
ENV_OUTPUT_DIR = "FBM_OUTPUT_DIR"


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Load a structured config file

    Args:
        path: .yaml/.yml/.json (parsed by yaml.safe_load) or .toml

    Returns:
        Nested dictionary
    """
    config_path = Path(path)
    if not config_path.exists():
        raise ValidationError(f"Config file not found: {path}", check="config.path")

    try:
        if config_path.suffix == ".toml":
            with open(config_path, "rb") as f:
                data = tomllib.load(f)
        else:
            with open(config_path, "r") as f:
                data = yaml.safe_load(f)
    except (yaml.YAMLError, tomllib.TOMLDecodeError) as e:
        raise ValidationError(f"Cannot parse {path}: {e}", check="config.parse") from e

    if not isinstance(data, dict):
        raise ValidationError(f"Config root must be a mapping: {path}", check="config.parse")
    return data


def set_dotted(data: Dict[str, Any], key: str, value: Any) -> None:
    """Set data['a']['b'] for key 'a.b', creating levels as needed"""
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def parse_params(params: Optional[List[str]]) -> Dict[str, Any]:
    """
    Parse repeated key=value overrides

    Values are YAML scalars, so '0.5' becomes a float and '[1, 2]' a list.
    """
    overrides: Dict[str, Any] = {}
    for param in params or []:
        if "=" not in param:
            raise ValidationError(f"Invalid parameter format: {param} (use key=value)",
                                  check="config.param")
        key, raw = param.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


def env_overrides() -> Dict[str, Any]:
    """Worker count and output directory from the environment"""
    overrides: Dict[str, Any] = {}
    workers = os.getenv(ENV_WORKERS)
    if workers:
        try:
            overrides["workers"] = int(workers)
        except ValueError as e:
            raise ValidationError(f"{ENV_WORKERS} must be an integer, got {workers!r}",
                                  check="config.env") from e
    output_dir = os.getenv(ENV_OUTPUT_DIR)
    if output_dir:
        overrides["output_dir"] = output_dir
    return overrides


def resolve(data: Dict[str, Any], cli_overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Apply environment then command-line overrides to a loaded config"""
    merged = yaml.safe_load(yaml.safe_dump(data))  # deep copy
    for key, value in env_overrides().items():
        set_dotted(merged, key, value)
    for key, value in cli_overrides.items():
        set_dotted(merged, key, value)
    return merged
