"""
Single-file checkpoint: magic line, 8-byte little-endian header length, JSON
header, then every tensor as little-endian float64 in header order.
"""
from pathlib import Path
from typing import Dict, Tuple, Union
import logging
import struct

import numpy as np
from pydantic import ValidationError

from models import CheckpointHeader, TensorSpec
from utils.errors import CheckpointError

MAGIC = b"HUAPA-CKPT\n"
FORMAT_VERSION = 1

logger = logging.getLogger(__name__)


def write_checkpoint(path: Union[str, Path], header: CheckpointHeader, tensors: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = header.model_copy(
        update={"tensors": [TensorSpec(name=name, shape=list(array.shape)) for name, array in tensors.items()]}
    )
    payload = header.model_dump_json().encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for array in tensors.values():
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    logger.info(f"Wrote checkpoint with {len(tensors)} tensors to {path}")


def read_checkpoint(path: Union[str, Path]) -> Tuple[CheckpointHeader, Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        try:
            (length,) = struct.unpack("<Q", f.read(8))
        except struct.error:
            raise CheckpointError(f"{path}: truncated header length")
        try:
            header = CheckpointHeader.model_validate_json(f.read(length))
        except ValidationError as e:
            raise CheckpointError(f"{path}: bad checkpoint header: {str(e)}")
        if header.format_version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {header.format_version}")

        tensors = {}
        for spec in header.tensors:
            count = int(np.prod(spec.shape, dtype=np.int64))
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise CheckpointError(f"{path}: truncated tensor '{spec.name}'")
            tensors[spec.name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(spec.shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return header, tensors
