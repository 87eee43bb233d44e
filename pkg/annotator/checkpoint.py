"""
Parameter checkpoints.

``<path>``       float32 little-endian tensors, concatenated in parameter order
``<path>.json``  manifest {format, dtype, tensors: [{name, shape, offset}], label_ids}
``<path>.cfg``   network config as key-value text
"""
import logging
from collections import OrderedDict
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from annotator.model import NetworkConfig, Parameters, parameter_shapes
from utils.errors import DataError
from utils.kvconfig import build_model, model_to_kv_lines, read_kv_file
from utils.storage import read_json, sidecar_path, write_json

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lesion-sense-checkpoint/1"
BLOB_DTYPE = "<f4"


def config_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".cfg")


def save_checkpoint(
    path: Union[str, Path], params: Parameters, label_ids: Sequence[int]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = []
    offset = 0
    with path.open("wb") as handle:
        for name, value in params.items():
            data = np.ascontiguousarray(value, dtype=np.dtype(BLOB_DTYPE))
            handle.write(data.tobytes())
            tensors.append({"name": name, "shape": list(value.shape), "offset": offset})
            offset += data.size
    write_json(
        sidecar_path(path),
        {
            "format": CHECKPOINT_FORMAT,
            "dtype": BLOB_DTYPE,
            "tensors": tensors,
            "label_ids": [int(i) for i in label_ids],
        },
    )
    config_path(path).write_text("\n".join(model_to_kv_lines(params.config)) + "\n", encoding="utf-8")
    logger.info(f"Saved checkpoint {path} ({offset} values, {len(tensors)} tensors)")


def load_checkpoint(path: Union[str, Path]) -> Tuple[Parameters, NetworkConfig, List[int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}", code="missing_checkpoint")
    manifest = read_json(sidecar_path(path))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(
            f"{sidecar_path(path)}: unsupported checkpoint format {manifest.get('format')!r}",
            code="sidecar_mismatch",
        )
    raw = {key: value for _, key, value in read_kv_file(config_path(path))}
    cfg = build_model(NetworkConfig, raw)

    blob = np.fromfile(path, dtype=np.dtype(BLOB_DTYPE))
    expected = parameter_shapes(cfg)
    entries = {entry["name"]: entry for entry in manifest.get("tensors", [])}
    if set(entries) != set(expected):
        raise DataError(
            f"{path}: checkpoint tensors do not match the network config",
            code="sidecar_mismatch",
        )
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in expected.items():
        entry = entries[name]
        if tuple(entry["shape"]) != shape:
            raise DataError(
                f"{path}: tensor '{name}' has shape {entry['shape']}, expected {list(shape)}",
                code="sidecar_mismatch",
            )
        size = int(np.prod(shape))
        start = int(entry["offset"])
        if start + size > blob.size:
            raise DataError(f"{path}: blob too short for tensor '{name}'", code="sidecar_mismatch")
        tensors[name] = blob[start : start + size].reshape(shape).astype(cfg.np_dtype)

    label_ids = [int(i) for i in manifest.get("label_ids", [])]
    if len(label_ids) != cfg.n_labels:
        raise DataError(
            f"{path}: {len(label_ids)} label ids for a network with {cfg.n_labels} outputs",
            code="sidecar_mismatch",
        )
    logger.info(f"Loaded checkpoint {path}")
    return Parameters(cfg, tensors), cfg, label_ids
