"""Binary parameter checkpoints.

Layout (little-endian)::

    b"TSLD"  u16 version  u32 len  <config JSON>  u32 n_tensors
    per tensor: u16 len  <name utf-8>  u8 ndim  u32 * ndim  f64 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..core import BadMagicError, TruncatedPayloadError, UnsupportedVersionError
from .network import TsldConfig, TsldParams

MAGIC = b"TSLD"
VERSION = 1


def save_checkpoint(path, params: TsldParams, config: TsldConfig, extra: dict | None = None) -> None:
    params.check(config)
    header = json.dumps({"config": config.to_dict(), "extra": extra or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(header)), header, struct.pack("<I", len(params))]
    for name, value in params.items():
        raw = name.encode()
        arr = np.ascontiguousarray(value, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedPayloadError(f"{self.path}: checkpoint truncated at byte {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))


def load_checkpoint(path) -> tuple[TsldParams, TsldConfig, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a TSLD checkpoint")
    r = _Reader(raw, path)
    r.take(4)
    version, n_header = r.unpack("<HI")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(r.take(n_header))
    config = TsldConfig.from_dict(header["config"])
    (n_tensors,) = r.unpack("<I")
    params = TsldParams()
    for _ in range(n_tensors):
        (n_name,) = r.unpack("<H")
        name = r.take(n_name).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    params.check(config)
    return params, config, header.get("extra", {})
