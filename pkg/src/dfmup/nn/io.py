"""Binary weight files.

Layout (little endian): b"DFMW", u32 version, 64 ASCII hex chars of the
config sha256, u32 length + config JSON, u32 array count, then per array
u16 name length + name, u8 ndim, ndim x u32 dims and the float32 payload,
in declaration order.  A trailing u32 length + JSON block carries the
normalization statistics (empty when absent).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import FormatError, VersionError
from .model import Network, NetworkConfig

MAGIC = b"DFMW"
VERSION = 1


def _arrays(model: Network):
    yield from model.params.items()
    yield from model.buffers.items()


def weights_to_bytes(model: Network, stats_json: str = "") -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    out = [MAGIC, struct.pack("<I", VERSION), model.config.digest().encode(),
           struct.pack("<I", len(cfg)), cfg]
    items = list(_arrays(model))
    out.append(struct.pack("<I", len(items)))
    for name, arr in items:
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    sj = stats_json.encode()
    out.append(struct.pack("<I", len(sj)) + sj)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("weight file is truncated")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def weights_from_bytes(buf: bytes, expected: Optional[NetworkConfig] = None) -> tuple[Network, str]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a weight file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(f"unsupported weight file version {version}")
    digest = r.take(64).decode("ascii", errors="replace")
    (n,) = r.unpack("<I")
    try:
        config = NetworkConfig.from_dict(json.loads(r.take(n)))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad config block: {exc}") from exc
    if config.digest() != digest:
        raise FormatError("config hash mismatch")
    if expected is not None and expected.digest() != digest:
        raise FormatError("weight file was written for a different network config")
    ref = Network.create(config, dtype=np.float32)
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    expect = dict(_arrays(ref))
    if set(arrays) != set(expect):
        raise FormatError("array names do not match the network config")
    for name, arr in arrays.items():
        if arr.shape != expect[name].shape:
            raise FormatError(f"array {name} has shape {arr.shape}, expected {expect[name].shape}")
    (sl,) = r.unpack("<I")
    stats_json = r.take(sl).decode()
    if r.pos != len(buf):
        raise FormatError("trailing bytes after weight file")
    model = Network(config, {k: arrays[k] for k in ref.params}, {k: arrays[k] for k in ref.buffers}, np.float32)
    return model, stats_json


def save_weights(model: Network, path, stats_json: str = "") -> None:
    Path(path).write_bytes(weights_to_bytes(model, stats_json))


def load_weights(path, expected: Optional[NetworkConfig] = None) -> tuple[Network, str]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return weights_from_bytes(buf, expected)
