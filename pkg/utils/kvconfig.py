"""
Key-value text configuration: ``key = value`` lines, ``#`` comments,
dotted keys for sections and comma-separated lists.
"""
import typing
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Tuple, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from utils.errors import ConfigError

M = TypeVar("M", bound=BaseModel)

NONE_VALUES = ("", "none", "null")


def parse_kv_text(text: str, source: str = "<config>") -> List[Tuple[int, str, str]]:
    """(line_number, key, raw value) triples in file order."""
    entries = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{line_number}: expected 'key = value', got {raw.strip()!r}",
                code="malformed_config",
            )
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_number}: empty key", code="malformed_config")
        entries.append((line_number, key.lower(), value))
    return entries


def read_kv_file(path: Union[str, Path]) -> List[Tuple[int, str, str]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}", code="missing_config")
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


def _is_sequence(annotation: Any) -> bool:
    origin = typing.get_origin(annotation)
    if origin in (list, tuple, List, Tuple):
        return True
    if origin is Union:
        return any(_is_sequence(arg) for arg in typing.get_args(annotation) if arg is not type(None))
    return False


def _is_optional(annotation: Any) -> bool:
    return typing.get_origin(annotation) is Union and type(None) in typing.get_args(annotation)


def coerce_fields(model_cls: Type[BaseModel], raw: Dict[str, str], section: str = "") -> Dict[str, Any]:
    """Turn raw strings into values pydantic can validate; unknown keys are errors."""
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        info = model_cls.model_fields.get(key)
        if info is None:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"Unknown config key '{where}'", code="unknown_key")
        if _is_optional(info.annotation) and value.strip().lower() in NONE_VALUES:
            values[key] = None
        elif _is_sequence(info.annotation):
            values[key] = [part.strip() for part in value.split(",") if part.strip()]
        else:
            values[key] = value
    return values


def build_model(model_cls: Type[M], raw: Dict[str, str], section: str = "") -> M:
    try:
        return model_cls(**coerce_fields(model_cls, raw, section))
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(part) for part in err.get("loc", ()))
        where = ".".join(p for p in (section, field) if p)
        raise ConfigError(
            f"Invalid value for '{where or section}': {err.get('msg')}", code="invalid_value"
        )


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def model_to_kv_lines(model: BaseModel, section: str = "") -> List[str]:
    lines = []
    for name in type(model).model_fields:
        key = f"{section}.{name}" if section else name
        lines.append(f"{key} = {format_value(getattr(model, name))}")
    return lines
