"""Binary checkpoints.

Layout (all integers little-endian u32)::

    b"CABK" | version | len | config JSON | len | manifest JSON | tensor bytes

The config JSON is ``{"model": ModelConfig fields, "meta": {...}}`` with
sorted keys and no whitespace. The manifest lists ``[name, shape, offset]``
per tensor, offsets counted in bytes from the start of the tensor block.
Tensors are float32, row-major, in manifest order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from cabkws.errors import ConfigError
from cabkws.model.config import ModelConfig
from cabkws.model.network import ParamStore, check_params

MAGIC = b"CABK"
VERSION = 1
_U32 = struct.Struct("<I")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def encode(params: ParamStore, cfg: ModelConfig, meta: dict | None = None) -> bytes:
    check_params(params, cfg)
    header = canonical_json({"model": cfg.to_dict(), "meta": meta or {}}).encode()
    manifest, blobs, offset = [], [], 0
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append([name, list(arr.shape), offset])
        blobs.append(data)
        offset += len(data)
    man = canonical_json(manifest).encode()
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(header)), header, _U32.pack(len(man)), man]
    return b"".join(parts + blobs)


def decode(buf: bytes) -> tuple[ParamStore, ModelConfig, dict]:
    if buf[:4] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    pos = 4

    def u32():
        nonlocal pos
        if pos + 4 > len(buf):
            raise ValueError("truncated checkpoint header")
        (v,) = _U32.unpack_from(buf, pos)
        pos += 4
        return v

    version = u32()
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    n = u32()
    header = json.loads(buf[pos : pos + n])
    pos += n
    n = u32()
    manifest = json.loads(buf[pos : pos + n])
    pos += n
    cfg = ModelConfig.from_dict(header["model"])
    params = {}
    for name, shape, offset in manifest:
        count = int(np.prod(shape, dtype=np.int64))
        start = pos + offset
        if start + 4 * count > len(buf):
            raise ValueError(f"truncated tensor {name}")
        params[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(shape).astype(np.float32)
    check_params(params, cfg)
    return params, cfg, header.get("meta", {})


def save_checkpoint(path, params: ParamStore, cfg: ModelConfig, meta: dict | None = None) -> None:
    """Write atomically: a temp file in the same directory, then ``os.replace``."""
    data = encode(params, cfg, meta)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[ParamStore, ModelConfig, dict]:
    """Read a checkpoint; with ``expect`` set, a different config is a ConfigError."""
    with open(path, "rb") as f:
        params, cfg, meta = decode(f.read())
    if expect is not None and expect != cfg:
        diff = {k: (v, getattr(cfg, k)) for k, v in expect.to_dict().items() if getattr(cfg, k) != v}
        raise ConfigError(f"checkpoint config differs from the requested one: {diff}")
    return params, cfg, meta
