"""Binary weight archive.

Layout (all integers little-endian)::

    magic    4 bytes  b"GRNN"
    version  u16      1
    count    u32      number of tensors
    count x record:
        name_len u16, name (UTF-8), dtype u8 (1 = float32), rank u8,
        dims u32[rank], offset u64 (absolute byte offset of the payload)
    payloads: contiguous little-endian float32 data, one block per tensor
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MalformedArchiveError

MAGIC = b"GRNN"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHI")


def _record_size(name_bytes, rank):
    return 2 + len(name_bytes) + 1 + 1 + 4 * rank + 8


def dumps(tensors) -> bytes:
    items = []
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4", order="C")
        if arr.ndim > 255:
            raise ValueError(f"{name}: rank {arr.ndim} too large")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        items.append((nb, arr))
    offset = _HEADER.size + sum(_record_size(nb, a.ndim) for nb, a in items)
    head = [_HEADER.pack(MAGIC, VERSION, len(items))]
    for nb, arr in items:
        head.append(struct.pack("<H", len(nb)) + nb)
        head.append(struct.pack(f"<BB{arr.ndim}IQ", DTYPE_F32, arr.ndim, *arr.shape, offset))
        offset += arr.nbytes
    return b"".join(head) + b"".join(a.tobytes() for _, a in items)


def loads(buf: bytes) -> dict:
    """Parse an archive; any structural problem raises :class:`MalformedArchiveError`."""
    buf = memoryview(bytes(buf))
    try:
        magic, version, count = _HEADER.unpack_from(buf, 0)
    except struct.error:
        raise MalformedArchiveError("truncated header") from None
    if magic != MAGIC:
        raise MalformedArchiveError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise MalformedArchiveError(f"unsupported archive version {version}")
    pos = _HEADER.size
    entries = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            if pos + n > len(buf):
                raise MalformedArchiveError("truncated tensor name")
            name = bytes(buf[pos:pos + n]).decode("utf-8")
            pos += n
            dtype, rank = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            (offset,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            entries.append((name, dtype, dims, offset))
    except struct.error:
        raise MalformedArchiveError("truncated tensor table") from None
    except UnicodeDecodeError:
        raise MalformedArchiveError("tensor name is not valid UTF-8") from None

    out, spans = {}, []
    for name, dtype, dims, offset in entries:
        if dtype != DTYPE_F32:
            raise MalformedArchiveError(f"{name}: unknown dtype tag {dtype}")
        if name in out:
            raise MalformedArchiveError(f"duplicate tensor name {name!r}")
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if offset < pos or offset + nbytes > len(buf):
            raise MalformedArchiveError(f"{name}: payload out of bounds")
        spans.append((offset, offset + nbytes, name))
        out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4,
                                  offset=offset).reshape(dims).astype(np.float32)
    spans.sort()
    for (s0, e0, a), (s1, _, b) in zip(spans, spans[1:]):
        if s1 < e0:
            raise MalformedArchiveError(f"payloads of {a!r} and {b!r} overlap")
    return out


def save(path, tensors):
    Path(path).write_bytes(dumps(tensors))


def load(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such weight archive: {path}")
    return loads(path.read_bytes())
