"""Flat deterministic tensor archive.

File layout::

    8 bytes   magic b"DCODARC1"
    8 bytes   header length (little-endian unsigned)
    N bytes   UTF-8 JSON header
    ...       raw little-endian tensor payload

The header holds the ordered tensor directory (name, dtype, shape, byte
offset) plus a free-form ``meta`` object. Identical state always serializes
to identical bytes, so archives round-trip bit-exactly.
"""

import json
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptArchive

MAGIC = b"DCODARC1"

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "int32": torch.int32,
    "uint8": torch.uint8,
    "bool": torch.bool,
}


def _dtype_name(t: torch.Tensor) -> str:
    name = str(t.dtype).replace("torch.", "")
    if name not in _DTYPES:
        raise CorruptArchive(f"unsupported tensor dtype {name}")
    return name


def save_archive(path, tensors: dict, meta: dict) -> None:
    """Write named tensors plus JSON-serializable metadata."""
    directory = []
    blobs = []
    offset = 0
    for name, tensor in tensors.items():
        arr = tensor.detach().cpu().contiguous().numpy()
        blob = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        directory.append({
            "name": name,
            "dtype": _dtype_name(tensor),
            "shape": list(tensor.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps({"meta": meta, "tensors": directory},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_archive(path):
    """Read back (tensors, meta); raises CorruptArchive on malformed files."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorruptArchive(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise CorruptArchive(f"{path} is not a tensor archive")
    header_len = int.from_bytes(raw[len(MAGIC):len(MAGIC) + 8], "little")
    body_start = len(MAGIC) + 8
    if len(raw) < body_start + header_len:
        raise CorruptArchive(f"{path} is truncated (header)")
    try:
        header = json.loads(raw[body_start:body_start + header_len].decode("utf-8"))
        directory = header["tensors"]
        meta = header["meta"]
    except (ValueError, KeyError) as exc:
        raise CorruptArchive(f"{path} has a malformed header: {exc}") from exc

    payload = raw[body_start + header_len:]
    tensors = {}
    for entry in directory:
        try:
            name, dtype = entry["name"], _DTYPES[entry["dtype"]]
            shape, offset, nbytes = entry["shape"], entry["offset"], entry["nbytes"]
        except (KeyError, TypeError) as exc:
            raise CorruptArchive(f"{path} has a malformed directory entry") from exc
        if offset + nbytes > len(payload):
            raise CorruptArchive(f"{path} is truncated (payload for {name})")
        np_dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(payload, dtype=np_dtype, count=nbytes // np_dtype.itemsize,
                            offset=offset).copy()
        tensors[name] = torch.from_numpy(arr).to(dtype).reshape(shape)
    return tensors, meta
