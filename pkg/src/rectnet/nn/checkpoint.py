"""Binary checkpoint format.

Layout (all integers little-endian)::

    8s   magic  b"RECTNETW"
    u32  format version
    u32  length of the UTF-8 JSON header, then the header
         ({"kind": ..., "config": {...}, "meta": {...}})
    u32  tensor count, then per tensor:
         u16 name length, name, u8 ndim, u32 x ndim dims
    float32 little-endian payload, tensors in table order, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RECTNETW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, kind: str, config: dict, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = json.dumps({"kind": kind, "config": config, "meta": meta or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(params))]
    for name, arr in params.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray], dict]:
    """Returns ``(kind, config, params, meta)``; params are float32."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        header = json.loads(buf[pos:pos + hlen])
        pos += hlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        table = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            table.append((name, dims))
        params = {}
        for name, dims in table:
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(buf):
                raise CheckpointError(f"{path}: truncated payload")
            params[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return header["kind"], header["config"], params, header.get("meta", {})


def save_model(model, path, meta: dict | None = None) -> None:
    save_checkpoint(path, model.kind, model.config_dict(), model.named_params(), meta)


def load_model(path, dtype=np.float32):
    from ..models import model_from_config
    kind, config, params, _ = load_checkpoint(path)
    model = model_from_config(kind, config, dtype=dtype)
    model.load_params(params)
    return model
