"""
File helpers: JSON-lines, raw little-endian arrays with JSON sidecars,
CSV tables and git-style content hashes.
"""
import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Sequence, TextIO, Tuple, Union

import numpy as np

from utils.errors import DataError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def iter_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line_number, object) pairs, skipping blank lines."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}", code="missing_file")

    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(
                    f"{path}:{line_number}: invalid JSON ({e.msg})",
                    code="malformed_jsonl",
                    line_number=line_number,
                )
            if not isinstance(obj, dict):
                raise DataError(
                    f"{path}:{line_number}: expected a JSON object",
                    code="malformed_jsonl",
                    line_number=line_number,
                )
            yield line_number, obj


def dump_jsonl(objects: Iterable[Dict[str, Any]], stream: TextIO) -> int:
    """Write one compact JSON object per line; returns the number of lines."""
    count = 0
    for obj in objects:
        stream.write(json.dumps(obj, ensure_ascii=False, sort_keys=True))
        stream.write("\n")
        count += 1
    return count


def write_jsonl(path: PathLike, objects: Iterable[Dict[str, Any]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        return dump_jsonl(objects, handle)


def write_json(path: PathLike, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}", code="missing_file")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg})", code="malformed_json")


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_raw_array(path: PathLike, array: np.ndarray, dtype: str) -> None:
    """Write an array as raw little-endian bytes of the given dtype (e.g. '<f4')."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(array, dtype=np.dtype(dtype)).tofile(path)


def read_raw_array(path: PathLike, dtype: str, shape: Sequence[int]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}", code="missing_file")
    data = np.fromfile(path, dtype=np.dtype(dtype))
    expected = int(np.prod(shape))
    if data.size != expected:
        raise DataError(
            f"{path}: expected {expected} values for shape {list(shape)}, "
            f"found {data.size}",
            code="sidecar_mismatch",
        )
    return data.reshape(tuple(shape))


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(value) for value in row])


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def format_cell(value: Any) -> str:
    """Fixed float formatting so CSV output is byte-stable across runs."""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6f}"
    return str(value)


def git_blob_hash(path: PathLike) -> str:
    """Content hash computed the way git hashes a blob."""
    data = Path(path).read_bytes()
    digest = hashlib.sha1()
    digest.update(f"blob {len(data)}\0".encode("ascii"))
    digest.update(data)
    return digest.hexdigest()
