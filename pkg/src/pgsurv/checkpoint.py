"""Single-file checkpoints.

Layout: 8-byte magic, u32 format version, u64 header length, UTF-8 JSON
header (config echo, metadata, tensor index, RNG state), then the named
tensors as little-endian float64 in index order. The header is written with
sorted keys so identical runs give identical bytes.
"""
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PGSCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def save_checkpoint(path, tensors, config=None, meta=None, rng_state=None):
    names = sorted(tensors)
    index, offset, blobs = [], 0, []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        index.append([name, list(arr.shape), offset])
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": _jsonable(config or {}),
        "meta": _jsonable(meta or {}),
        "rng": _jsonable(rng_state or {}),
        "tensors": index,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path):
    """Return (tensors, header)."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    tensors = {}
    for name, shape, offset in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        lo = start + offset
        if lo + 8 * n > len(data):
            raise CheckpointError(f"{path}: tensor {name} runs past end of file")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=lo).reshape(shape).astype(np.float64)
    return tensors, header
