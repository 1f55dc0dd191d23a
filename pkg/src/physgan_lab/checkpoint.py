"""PGT1 checkpoint files.

Layout: the 4-byte magic ``PGT1``, a little-endian uint32 manifest length, a
UTF-8 JSON manifest, then a flat little-endian float payload. The manifest
lists every array as ``{name, shape, dtype, offset}`` with ``offset`` counted
in bytes from the start of the payload, plus a free-form ``meta`` mapping.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np

from .errors import ConfigurationError, IngestionError
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"PGT1"
DTYPES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(
    path: Path,
    arrays: Mapping[str, Union[Tensor, np.ndarray]],
    dtype: str = "float64",
    meta: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write named arrays to `path`; float32 storage is allowed for checkpoints only."""
    if dtype not in DTYPES:
        raise ConfigurationError(f"Checkpoint dtype must be one of {sorted(DTYPES)}, got '{dtype}'")
    code = DTYPES[dtype]
    entries = []
    chunks = []
    offset = 0
    for name, value in arrays.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        raw = np.ascontiguousarray(data, dtype=code).tobytes()
        entries.append({"name": name, "shape": list(data.shape), "dtype": dtype, "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries, "meta": dict(meta or {})}, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for raw in chunks:
            f.write(raw)
    logger.info(f"Wrote checkpoint {path} ({len(entries)} tensors, {offset} payload bytes)")
    return path


def load_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a PGT1 file back into float64 arrays and its meta mapping.

    Raises:
        FileNotFoundError: If `path` does not exist.
        IngestionError: If the file is not a valid PGT1 checkpoint.
    """
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise IngestionError(f"{path} is not a PGT1 checkpoint (magic {blob[:4]!r})")
    try:
        (length,) = struct.unpack("<I", blob[4:8])
        manifest = json.loads(blob[8 : 8 + length].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IngestionError(f"Corrupt manifest in {path}: {e}") from e
    payload = memoryview(blob)[8 + length :]

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        code = DTYPES.get(entry["dtype"])
        if code is None:
            raise IngestionError(f"{path}: unsupported dtype '{entry['dtype']}' for '{entry['name']}'")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * np.dtype(code).itemsize
        if end > len(payload):
            raise IngestionError(f"{path}: payload truncated while reading '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(payload[start:end], dtype=code).astype(np.float64).reshape(shape)
    return arrays, manifest.get("meta", {})
