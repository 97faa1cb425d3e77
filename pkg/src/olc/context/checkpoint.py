"""Weight checkpoint container.

Layout (all integers little-endian)::

    magic      4 bytes  b"OLCW"
    version    u8
    hdr_len    u32
    header     hdr_len bytes of UTF-8 JSON: {"config": {...}, "params": [[name, shape], ...]}
    blob       float32 LE parameters, concatenated in header order
    checksum   u64, first 8 bytes of BLAKE2b(header || blob)

The same checksum identifies the weights inside bitstream headers.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from olc.context.model import ContextModel, ModelConfig
from olc.errors import ChecksumMismatchError, FormatError

MAGIC = b"OLCW"
VERSION = 1


def _serialize(model: ContextModel) -> tuple[bytes, bytes]:
    state = model.state_dict()
    names = sorted(state)
    header = json.dumps(
        {"config": model.config.to_dict(), "params": [[n, list(state[n].shape)] for n in names]},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    blob = b"".join(state[n].detach().to(torch.float32).numpy().astype("<f4").tobytes() for n in names)
    return header, blob


def _digest(header: bytes, blob: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(header + blob, digest_size=8).digest(), "little")


def weights_checksum(model: ContextModel) -> int:
    return _digest(*_serialize(model))


def save_checkpoint(model: ContextModel, path: str | Path) -> int:
    header, blob = _serialize(model)
    digest = _digest(header, blob)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<BI", VERSION, len(header)))
        fh.write(header)
        fh.write(blob)
        fh.write(struct.pack("<Q", digest))
    return digest


def load_checkpoint(path: str | Path) -> ContextModel:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a weight checkpoint")
    version, hdr_len = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 9
    header = data[off : off + hdr_len]
    meta = json.loads(header)
    blob_len = sum(4 * int(np.prod(shape)) for _, shape in meta["params"])
    blob = data[off + hdr_len : off + hdr_len + blob_len]
    tail = data[off + hdr_len + blob_len :]
    if len(blob) != blob_len or len(tail) != 8:
        raise FormatError(f"{path}: truncated checkpoint")
    (stored,) = struct.unpack("<Q", tail)
    if stored != _digest(header, blob):
        raise ChecksumMismatchError(f"{path}: checkpoint checksum mismatch")

    model = ContextModel(ModelConfig(**meta["config"]), seed=None)
    state = {}
    pos = 0
    for name, shape in meta["params"]:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
        pos += 4 * n
    model.load_state_dict(state)
    model.eval()
    return model
