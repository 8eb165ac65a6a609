"""
Checkpoint container.

Layout (one file):

    CCN-CKPT-v1\\n
    <one line of JSON metadata>\\n
    <raw float64 little-endian bytes of every array, in index order>

The metadata holds hyperparameters, variant, feature schema and its
fingerprint, network widths, seed lineage and the array index
(name, shape, offset in values).
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from ..config import HyperParams, NetworkConfig
from ..errors import (
    CheckpointError,
    CheckpointVersionError,
    CorruptCheckpointError,
    SchemaMismatchError,
)
from ..features.embedding import FeatureSchema
from ..models.variant import ModelVariant
from .ctr_model import CCNModel, parameter_shapes

logger = logging.getLogger(__name__)

FORMAT_VERSION = "CCN-CKPT-v1"
HEADER_PREFIX = "CCN-CKPT-"
DTYPE = "<f8"


# ==============================================================================
# SAVE
# ==============================================================================

def _metadata(model: CCNModel) -> Dict[str, Any]:
    index = []
    offset = 0
    for name, array in model.params.items():
        index.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += int(array.size)
    return {
        "format": FORMAT_VERSION,
        "variant": model.variant.value,
        "hyper": model.hyper.model_dump(mode="json", by_alias=True),
        "network": model.network.model_dump(mode="json"),
        "schema": model.schema.to_dict(),
        "schema_fingerprint": model.schema.fingerprint(),
        "seed": model.seed,
        "lineage": model.lineage,
        "arrays": index,
        "total_values": offset,
    }


def save_checkpoint(model: CCNModel, path: Union[str, Path]) -> Path:
    """Write the model to path.

    Raises:
        CheckpointError: On I/O failure, with the path in the message
    """
    path = Path(path)
    meta = json.dumps(_metadata(model), sort_keys=True, separators=(",", ":"))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(f"{FORMAT_VERSION}\n".encode("ascii"))
            f.write(meta.encode("utf-8") + b"\n")
            for array in model.params.values():
                f.write(np.ascontiguousarray(array, dtype=DTYPE).tobytes())
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}")
    logger.info(f"Saved {model.variant.value} checkpoint to {path} ({model.parameter_count} values)")
    return path


# ==============================================================================
# LOAD
# ==============================================================================

def _split_container(path: Path, raw: bytes):
    first = raw.find(b"\n")
    if first < 0:
        raise CorruptCheckpointError(f"{path}: missing header line")
    header = raw[:first].decode("ascii", errors="replace")
    if header != FORMAT_VERSION:
        if header.startswith(HEADER_PREFIX):
            raise CheckpointVersionError(
                f"{path}: unsupported checkpoint version '{header}', expected '{FORMAT_VERSION}'"
            )
        raise CorruptCheckpointError(f"{path}: not a CCN checkpoint")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise CorruptCheckpointError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[first + 1:second].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"{path}: unreadable metadata: {e}")
    return meta, raw[second + 1:]


def _check_schema(schema: FeatureSchema, expected: Optional[FeatureSchema]) -> None:
    if expected is None:
        return
    found, wanted = schema.to_dict(), expected.to_dict()
    for key in wanted:
        if found.get(key) != wanted[key]:
            raise SchemaMismatchError(key, wanted[key], found.get(key))


def load_checkpoint(
    path: Union[str, Path],
    expected_schema: Optional[FeatureSchema] = None,
) -> CCNModel:
    """Read a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint file
        expected_schema: If given, every schema field must match

    Returns:
        CCNModel with bit-identical parameters

    Raises:
        CheckpointError: If the file is missing
        CheckpointVersionError: If the header names another format version
        CorruptCheckpointError: If the container is truncated or inconsistent
        SchemaMismatchError: If the schema differs from expected_schema
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    meta, payload = _split_container(path, raw)
    try:
        schema = FeatureSchema.from_dict(meta["schema"])
        variant = ModelVariant(meta["variant"])
        hyper = HyperParams.model_validate(meta["hyper"])
        network = NetworkConfig.model_validate(meta["network"])
        index = meta["arrays"]
        total = int(meta["total_values"])
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise CorruptCheckpointError(f"{path}: incomplete metadata: {e}")

    if schema.fingerprint() != meta.get("schema_fingerprint"):
        raise CorruptCheckpointError(f"{path}: schema fingerprint does not match stored schema")
    _check_schema(schema, expected_schema)

    if len(payload) != total * 8:
        raise CorruptCheckpointError(
            f"{path}: expected {total * 8} bytes of values, found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=DTYPE)

    expected_shapes = parameter_shapes(schema, network, variant)
    params: Dict[str, np.ndarray] = {}
    for entry in index:
        name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if expected_shapes.get(name) != shape:
            raise CorruptCheckpointError(f"{path}: array '{name}' has unexpected shape {shape}")
        size = int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + size > total:
            raise CorruptCheckpointError(f"{path}: array '{name}' lies outside the payload")
        params[name] = values[offset:offset + size].astype(np.float64).reshape(shape)
    missing = set(expected_shapes) - set(params)
    if missing:
        raise CorruptCheckpointError(f"{path}: missing arrays {sorted(missing)}")

    logger.info(f"Loaded {variant.value} checkpoint from {path}")
    return CCNModel(
        schema=schema,
        hyper=hyper,
        network=network,
        variant=variant,
        params={name: params[name] for name in expected_shapes},
        seed=int(meta.get("seed", 0)),
        lineage=dict(meta.get("lineage", {})),
    )
