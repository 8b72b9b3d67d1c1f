"""Binary checkpoint container.

Layout, all integers little-endian::

    4 bytes   magic b"LIQA"
    u32       format version (1)
    u32       metadata length L
    L bytes   metadata, UTF-8 JSON with sorted keys
    u32       tensor count
    per tensor:
      u16     name length, then the UTF-8 name
      u8      rank R, then R x u32 dims
      float32 little-endian payload, row-major
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LIQA"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    metadata: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta,
                 struct.pack("<I", len(self.tensors))]
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f4")
            parts.append(struct.pack("<H", len(raw)) + raw)
            parts.append(struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape))
            parts.append(a.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint")
        version, mlen = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        meta = json.loads(buf[pos:pos + mlen].decode("utf-8"))
        pos += mlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += 4 * n
            tensors[name] = arr.astype(np.float32)
        if pos != len(buf):
            raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
        return cls(meta, tensors)

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
