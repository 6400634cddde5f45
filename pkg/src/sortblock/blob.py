"""Latent blob files.

Layout: 16-byte magic, little-endian uint32 header length, UTF-8 JSON header
{"shape", "dtype": "f32le", "seed", "config_hash"}, then the raw row-major
float32 payload.  Bit-exact comparisons in tests read these files directly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"SORTBLOCK-LATENT"


def write_latent(path, latent: np.ndarray, seed: int, config_hash: str) -> None:
    header = {
        "shape": list(latent.shape),
        "dtype": "f32le",
        "seed": int(seed),
        "config_hash": config_hash,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(latent.astype("<f4").tobytes(order="C"))


def read_latent(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a latent blob (bad magic)")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: malformed blob header: {exc}") from exc
    offset += header_len
    if header.get("dtype") != "f32le":
        raise ParseError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = tuple(int(v) for v in header["shape"])
    expected = int(np.prod(shape)) * 4
    payload = raw[offset:]
    if len(payload) != expected:
        raise ParseError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return arr, header
