"""Binary checkpoint envelope.

Layout (all integers little-endian)::

    b"XMEXP1"
    u32  block count
    per block:
        u8   tag length, then the ASCII kind tag ("conv.w", "dense.b", "som", ...)
        u8   ndim, then ndim x u32 dims
        payload: prod(dims) x f64 (LE), or raw bytes for the "meta" tag
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError

MAGIC = b"XMEXP1"
META = "meta"


@dataclass
class Block:
    kind: str
    data: np.ndarray | bytes

    @property
    def shape(self) -> tuple:
        if isinstance(self.data, bytes):
            return (len(self.data),)
        return self.data.shape


def encode_blocks(blocks: list[Block]) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", len(blocks))
    for block in blocks:
        tag = block.kind.encode("ascii")
        if len(tag) > 255:
            raise ConfigurationError(f"kind tag too long: {block.kind}")
        out += struct.pack("<B", len(tag)) + tag
        shape = block.shape
        out += struct.pack("<B", len(shape))
        out += struct.pack(f"<{len(shape)}I", *shape)
        if isinstance(block.data, bytes):
            out += block.data
        else:
            out += np.ascontiguousarray(block.data, dtype="<f8").tobytes()
    return bytes(out)


def decode_blocks(raw: bytes) -> list[Block]:
    if raw[:len(MAGIC)] != MAGIC:
        raise InputError("not a checkpoint: bad magic at offset 0")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise InputError(f"truncated checkpoint at offset {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    blocks = []
    for _ in range(count):
        (tag_len,) = struct.unpack("<B", take(1))
        kind = take(tag_len).decode("ascii")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        if kind == META:
            blocks.append(Block(kind, take(n)))
        else:
            data = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
            blocks.append(Block(kind, data))
    if pos != len(raw):
        raise InputError(f"trailing bytes after last block at offset {pos}")
    return blocks


def save(path: str | Path, blocks: list[Block]) -> None:
    Path(path).write_bytes(encode_blocks(blocks))


def load(path: str | Path) -> list[Block]:
    return decode_blocks(Path(path).read_bytes())
