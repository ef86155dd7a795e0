"""Load run configuration from YAML (JSON is accepted too, YAML being a superset)."""

import copy
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

REPO_ROOT = Path(__file__).resolve().parent.parent.parent
CONFIG_DIR = REPO_ROOT / "config"


def resolve_path(path: str | Path, base: Path | None = None) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = (base or REPO_ROOT) / p
    return p


def load_config(config_path: str | Path | None = None) -> dict[str, Any]:
    path = resolve_path(config_path) if config_path else CONFIG_DIR / "pipeline.yaml"
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def merge_overrides(config: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Return a copy of config with overrides applied; keys may be dotted ("train.epochs").

    None values mean "flag not given" and are skipped, so a flag always wins over the
    file only when it was actually set.
    """
    merged = copy.deepcopy(config)
    for key, value in overrides.items():
        if value is None:
            continue
        node = merged
        *parents, leaf = key.split(".")
        for part in parents:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[leaf] = value
    return merged
