"""Flat binary checkpoint container with a JSON sidecar index.

Layout: the .bin file is the concatenation of each array's row-major
bytes; the sidecar ``<path>.json`` lists, per array, its name, dtype tag,
shape and byte offset, plus free-form metadata. Round-trips are bit-exact.
"""

import json
import os
import tempfile

import numpy as np

SCHEMA_VERSION = 1

_DTYPE_TAGS = {"f8": np.float64, "f4": np.float32, "i8": np.int64}
_TAG_FOR = {np.dtype(v): k for k, v in _DTYPE_TAGS.items()}


def sidecar_path(path):
    return str(path) + ".json"


def save_arrays(path, arrays, meta=None):
    """Write named arrays + metadata atomically (temp file + rename)."""
    path = str(path)
    index = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _TAG_FOR:
            raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
        raw = arr.tobytes()
        index.append(
            {
                "name": name,
                "dtype": _TAG_FOR[arr.dtype],
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)

    payload = b"".join(chunks)
    doc = {"schema_version": SCHEMA_VERSION, "arrays": index, "meta": meta or {}}
    _atomic_write_bytes(path, payload)
    _atomic_write_bytes(sidecar_path(path), json.dumps(doc, indent=1, sort_keys=True).encode())


def load_arrays(path):
    """Read back (arrays dict, meta dict)."""
    path = str(path)
    with open(sidecar_path(path)) as fh:
        doc = json.load(fh)
    with open(path, "rb") as fh:
        payload = fh.read()
    arrays = {}
    for ent in doc["arrays"]:
        dt = np.dtype(_DTYPE_TAGS[ent["dtype"]])
        start = ent["offset"]
        raw = payload[start : start + ent["nbytes"]]
        arrays[ent["name"]] = np.frombuffer(raw, dtype=dt).reshape(ent["shape"]).copy()
    return arrays, doc.get("meta", {})


def _atomic_write_bytes(path, data):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    _atomic_write_bytes(str(path), text.encode())
