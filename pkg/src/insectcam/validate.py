"""JSON Schema checks for config documents and manifest rows, run before any stage touches data."""

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Sequence

import jsonschema
from jsonschema.exceptions import best_match

from .config_loader import CONFIG_DIR
from .errors import ConfigError

SCHEMAS_DIR = CONFIG_DIR / "schemas"


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict[str, Any]:
    path = SCHEMAS_DIR / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"no schema named {name!r} in {SCHEMAS_DIR}")
    return json.loads(path.read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def _validator(name: str) -> jsonschema.Draft7Validator:
    schema = load_schema(name)
    jsonschema.Draft7Validator.check_schema(schema)
    return jsonschema.Draft7Validator(schema)


def _where(error: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in error.absolute_path) or "<root>"


def validate_document(doc: Any, schema_name: str, what: str | None = None) -> None:
    """Raise ConfigError naming the offending field if doc does not match the schema."""
    error = best_match(_validator(schema_name).iter_errors(doc))
    if error is not None:
        raise ConfigError(f"{what or schema_name}: {_where(error)}: {error.message}")


@dataclass(frozen=True)
class RowError:
    line: int
    field: str
    message: str


def validate_rows(
    rows: Sequence[dict[str, Any]],
    schema_name: str,
    lines: Sequence[int] | None = None,
) -> list[RowError]:
    """One RowError per failing row, in row order. `lines` maps rows to source line numbers (default 1-based index)."""
    if lines is not None and len(lines) != len(rows):
        raise ValueError(f"{len(lines)} line numbers for {len(rows)} rows")
    validator = _validator(schema_name)
    errors = []
    for i, row in enumerate(rows):
        error = best_match(validator.iter_errors(row))
        if error is not None:
            line = lines[i] if lines is not None else i + 1
            errors.append(RowError(line, _where(error), error.message))
    return errors
