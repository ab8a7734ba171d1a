"""Little-endian binary blocks shared by CSR files and checkpoints.

Layout of a block stream: repeated sections, each
``u32 name_len | name utf-8 | u64 payload_len | payload``.
Array payloads are ``u64 ndim | u64 dims... | raw values``; float arrays
store little-endian float64, integer arrays little-endian int64, so a
write/read cycle is bit-exact.
"""

import struct

import numpy as np

from .errors import CheckpointError

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def pack_array(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        tag, data = b"f8", arr.astype("<f8", copy=False)
    elif arr.dtype == np.int64:
        tag, data = b"i8", arr.astype("<i8", copy=False)
    else:
        raise CheckpointError(f"unsupported array dtype {arr.dtype}")
    parts = [tag, _U64.pack(arr.ndim)]
    parts.extend(_U64.pack(d) for d in arr.shape)
    parts.append(np.ascontiguousarray(data).tobytes())
    return b"".join(parts)


def unpack_array(payload):
    tag = payload[:2]
    if tag == b"f8":
        dtype = "<f8"
    elif tag == b"i8":
        dtype = "<i8"
    else:
        raise CheckpointError(f"unknown array tag {tag!r}")
    ndim = _U64.unpack_from(payload, 2)[0]
    shape = tuple(_U64.unpack_from(payload, 10 + 8 * i)[0] for i in range(ndim))
    off = 10 + 8 * ndim
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(payload, dtype=dtype, count=count, offset=off)
    return arr.reshape(shape).astype(dtype[1:], copy=True)


def write_sections(fh, magic, version, sections):
    """sections: iterable of (name, payload bytes), written in given order."""
    fh.write(magic)
    fh.write(_U32.pack(version))
    for name, payload in sections:
        raw = name.encode("utf-8")
        fh.write(_U32.pack(len(raw)))
        fh.write(raw)
        fh.write(_U64.pack(len(payload)))
        fh.write(payload)


def read_sections(fh, magic, version):
    """Returns an ordered dict name -> payload; validates magic/version."""
    got = fh.read(len(magic))
    if got != magic:
        raise CheckpointError(f"bad magic: expected {magic!r}, found {got!r}")
    raw = fh.read(4)
    if len(raw) < 4:
        raise CheckpointError("truncated header")
    found = _U32.unpack(raw)[0]
    if found != version:
        raise CheckpointError(f"version mismatch: expected {version}, found {found}")
    out = {}
    while True:
        head = fh.read(4)
        if not head:
            break
        if len(head) < 4:
            raise CheckpointError("truncated section header")
        name_len = _U32.unpack(head)[0]
        name = fh.read(name_len)
        size_raw = fh.read(8)
        if len(name) < name_len or len(size_raw) < 8:
            raise CheckpointError("truncated section header")
        size = _U64.unpack(size_raw)[0]
        payload = fh.read(size)
        if len(payload) < size:
            raise CheckpointError(f"truncated payload for section {name!r}")
        out[name.decode("utf-8")] = payload
    return out
