"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      4 bytes  b"S2L1"
    version    u32
    digest     32 bytes sha256 of the training config
    iteration  u64
    n_sections u32
    section*   name_len u16, name utf-8, kind u8, payload

kind 0 is a named array table: n u32, then per array key_len u16, key
utf-8, ndim u8, dims u32*ndim, float32 little-endian data. kind 1 is a
utf-8 JSON blob: length u32, bytes. Sections and keys are written in sorted
order so that save -> load -> save is byte-identical.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"S2L1"
VERSION = 1
ARRAYS, JSON = 0, 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    digest: bytes
    iteration: int = 0
    arrays: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    blobs: dict[str, dict] = field(default_factory=dict)

    def section(self, name: str) -> dict[str, np.ndarray]:
        try:
            return self.arrays[name]
        except KeyError:
            raise CheckpointError(f"checkpoint has no section {name!r}") from None


def _w_str(buf: io.BytesIO, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<H", len(b)))
    buf.write(b)


def _r(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _r_str(buf: io.BytesIO) -> str:
    (n,) = _r(buf, "<H")
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw.decode("utf-8")


def dumps(ck: Checkpoint) -> bytes:
    if len(ck.digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(ck.digest)
    buf.write(struct.pack("<Q", ck.iteration))
    names = sorted(set(ck.arrays) | set(ck.blobs))
    if set(ck.arrays) & set(ck.blobs):
        raise CheckpointError("section names must be unique")
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        _w_str(buf, name)
        if name in ck.arrays:
            buf.write(struct.pack("<B", ARRAYS))
            table = ck.arrays[name]
            buf.write(struct.pack("<I", len(table)))
            for key in sorted(table):
                arr = np.ascontiguousarray(table[key], dtype="<f4")
                _w_str(buf, key)
                buf.write(struct.pack("<B", arr.ndim))
                buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                buf.write(arr.tobytes())
        else:
            buf.write(struct.pack("<B", JSON))
            blob = json.dumps(ck.blobs[name], sort_keys=True).encode("utf-8")
            buf.write(struct.pack("<I", len(blob)))
            buf.write(blob)
    return buf.getvalue()


def loads(data: bytes) -> Checkpoint:
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = _r(buf, "<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = buf.read(32)
    (iteration,) = _r(buf, "<Q")
    (n,) = _r(buf, "<I")
    ck = Checkpoint(digest=digest, iteration=iteration)
    for _ in range(n):
        name = _r_str(buf)
        (kind,) = _r(buf, "<B")
        if kind == ARRAYS:
            (count,) = _r(buf, "<I")
            table = {}
            for _ in range(count):
                key = _r_str(buf)
                (ndim,) = _r(buf, "<B")
                shape = _r(buf, f"<{ndim}I") if ndim else ()
                size = int(np.prod(shape)) * 4
                raw = buf.read(size)
                if len(raw) != size:
                    raise CheckpointError("truncated checkpoint")
                table[key] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            ck.arrays[name] = table
        elif kind == JSON:
            (size,) = _r(buf, "<I")
            raw = buf.read(size)
            if len(raw) != size:
                raise CheckpointError("truncated checkpoint")
            try:
                ck.blobs[name] = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise CheckpointError(f"corrupt section {name!r}: {e}") from e
        else:
            raise CheckpointError(f"unknown section kind {kind}")
    if buf.read(1):
        raise CheckpointError("trailing bytes after last section")
    return ck


def save(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(dumps(ck))


def load(path) -> Checkpoint:
    try:
        return loads(Path(path).read_bytes())
    except OSError as e:
        raise OSError(f"cannot read checkpoint {path}: {e}") from e
