"""Versioned binary container used for dataset caches and model checkpoints.

Layout::

    b"AAFM" | kind (8 bytes, space padded) | u32 format version
    | u64 header length | header (canonical JSON)
    | for each array listed in header["arrays"]: u64 length | .npy bytes

Everything is written in a fixed order with no timestamps, so equal inputs
give byte-identical files.
"""

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AAFM"
FORMAT_VERSION = 1


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(obj, length=16):
    """Short sha256 of the canonical JSON encoding of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:length]


def file_digest(path, length=16):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:length]


def _kind_bytes(kind):
    raw = kind.encode("ascii")
    if len(raw) > 8:
        raise ValueError(f"container kind too long: {kind!r}")
    return raw.ljust(8, b" ")


def write_container(path, kind, header, arrays):
    header = dict(header)
    header["arrays"] = list(arrays)
    head = canonical_json(header).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_kind_bytes(kind))
    buf.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
    buf.write(head)
    for name in header["arrays"]:
        blob = io.BytesIO()
        np.save(blob, np.ascontiguousarray(arrays[name]), allow_pickle=False)
        raw = blob.getvalue()
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def read_container(path, kind):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an AAFM container")
    if data[4:12] != _kind_bytes(kind):
        found = data[4:12].decode("ascii", "replace").strip()
        raise ValueError(f"{path}: expected a {kind!r} container, found {found!r}")
    version, head_len = struct.unpack_from("<IQ", data, 12)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    pos = 12 + struct.calcsize("<IQ")
    header = json.loads(data[pos:pos + head_len])
    pos += head_len
    arrays = {}
    for name in header["arrays"]:
        (size,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        arrays[name] = np.load(io.BytesIO(data[pos:pos + size]), allow_pickle=False)
        pos += size
    return header, arrays
