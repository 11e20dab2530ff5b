"""Named-array container: the on-disk format for parameters and datasets.

Byte layout (all integers little-endian):

    bytes 0..7    magic ``b"NMF-ARR1"``
    bytes 8..15   uint64 length in bytes of the JSON header that follows
    header        UTF-8 JSON: {"arrays": [{"name": str,
                                            "shape": [int, ...],
                                            "offset": int}, ...],
                               "meta": {...}}
    payload       concatenated float64 little-endian values, row-major

``offset`` counts float64 elements from the start of the payload. ``meta``
is an arbitrary JSON object for format owners (model checkpoints store
their config header there); it defaults to {}.
"""

import json
from collections import OrderedDict

import numpy as np

from ..errors import DataError

MAGIC = b"NMF-ARR1"


def save_arrays(path, arrays, meta=None):
    """Write named arrays (dict or (name, array) iterable) to ``path``."""
    if isinstance(arrays, dict):
        items = list(arrays.items())
    else:
        items = list(arrays)
    manifest = []
    chunks = []
    offset = 0
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"arrays": manifest, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_arrays(path):
    """Read a container; returns (OrderedDict name -> float64 array, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise DataError(f"{path}: not a named-array container")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = OrderedDict()
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + size > flat.size:
            raise DataError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = flat[start : start + size].reshape(shape).copy()
    return arrays, header.get("meta", {})
