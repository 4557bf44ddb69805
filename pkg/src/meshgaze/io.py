"""Binary checkpoint container: named f32 tensors plus a JSON config echo.

Layout: magic(4) | u32 version=1 | u32 n_tensors |
        per tensor: u16 name_len | name utf8 | u8 ndim | u64*ndim dims | f32 data |
        u32 config_len | config JSON utf8.
All integers little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError

FUSION_MAGIC = b"SGWT"
POLICY_MAGIC = b"SGPI"


def save_checkpoint(path, magic: bytes, tensors: dict, config: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", 1, len(tensors)))
        for name in tensors:  # dict order is the canonical tensor order
            arr = np.asarray(tensors[name], dtype=np.float64)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype("<f4").tobytes())
        blob = json.dumps(config, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def load_checkpoint(path, magic: bytes):
    raw = open(path, "rb").read()
    if raw[:4] != magic:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    version, n_tensors = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    tensors = {}
    try:
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}Q", raw, off) if ndim else ()
            off += 8 * ndim
            count = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
            off += 4 * count
            tensors[name] = data.reshape(dims).astype(np.float64)
        (cfg_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        config = json.loads(raw[off : off + cfg_len].decode("utf-8"))
    except (struct.error, ValueError) as e:
        raise ParseError(f"{path}: truncated or corrupt checkpoint: {e}") from e
    return tensors, config
