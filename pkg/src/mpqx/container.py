"""Binary tensor container shared by weights, quantized models, datasets and inputs.

Layout (all integers little-endian):

    magic   4 bytes  "MICO"
    version u32
    count   u32
    per tensor:
        layer  u32
        role   u8    (see ROLE_* constants)
        rank   u8
        dims   u32 * rank
        bits   u8    -- only for roles QWEIGHT / QBIAS
        scale  f32   -- only for roles QWEIGHT / QBIAS
        data   payload, dtype depends on role

Payload dtypes: float32 for WEIGHT/BIAS/DATASET/INPUT, int32 for QBIAS,
uint32 words for QWEIGHT. QWEIGHT tensors are 2-D (rows x k elements) and
each row is packed independently, so the word payload has
rows * ceil(k*bits/32) words.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MAGIC = b"MICO"
VERSION = 1

ROLE_WEIGHT = 0
ROLE_BIAS = 1
ROLE_QWEIGHT = 2
ROLE_QBIAS = 3
ROLE_DATASET = 4
ROLE_INPUT = 5

_FLOAT_ROLES = (ROLE_WEIGHT, ROLE_BIAS, ROLE_DATASET, ROLE_INPUT)
_QUANT_ROLES = (ROLE_QWEIGHT, ROLE_QBIAS)


def words_per_row(k: int, bits: int) -> int:
    """Number of 32-bit words needed for one packed row of k elements."""
    return (k * bits + 31) // 32


@dataclass
class TensorRecord:
    layer: int
    role: int
    dims: tuple
    data: np.ndarray
    bits: int | None = None
    scale: float | None = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)


def _expected_payload(rec: TensorRecord):
    """Return (numpy dtype string, element count) for a record's payload."""
    n = int(np.prod(rec.dims)) if rec.dims else 1
    if rec.role in _FLOAT_ROLES:
        return "<f4", n
    if rec.role == ROLE_QBIAS:
        return "<i4", n
    if rec.role == ROLE_QWEIGHT:
        if len(rec.dims) != 2:
            raise ValidationError("packed weight tensors must be 2-D (rows x k)")
        rows, k = rec.dims
        return "<u4", rows * words_per_row(k, rec.bits)
    raise ValidationError(f"unknown tensor role {rec.role}")


def write_container(path, records) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(records))
    for rec in records:
        if rec.role in _QUANT_ROLES and (rec.bits is None or rec.scale is None):
            raise ValidationError("quantized tensor records need bits and scale")
        dtype, count = _expected_payload(rec)
        flat = np.ascontiguousarray(rec.data, dtype=dtype).reshape(-1)
        if flat.size != count:
            raise ValidationError(
                f"payload size {flat.size} does not match dims {rec.dims} (want {count})"
            )
        buf += struct.pack("<IBB", rec.layer, rec.role, len(rec.dims))
        buf += struct.pack(f"<{len(rec.dims)}I", *rec.dims)
        if rec.role in _QUANT_ROLES:
            buf += struct.pack("<Bf", rec.bits, rec.scale)
        buf += flat.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(buf))


class _Reader:
    def __init__(self, blob: bytes, name: str):
        self.blob = blob
        self.off = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise ValidationError(f"{self.name}: truncated container")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path) -> list[TensorRecord]:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, str(path))
    if r.take(4) != MAGIC:
        raise ValidationError(f"{path}: bad magic, not a tensor container")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported container version {version}")
    records = []
    for _ in range(count):
        layer, role, rank = r.unpack("<IBB")
        dims = r.unpack(f"<{rank}I") if rank else ()
        bits = scale = None
        if role in _QUANT_ROLES:
            bits, scale = r.unpack("<Bf")
        rec = TensorRecord(layer, role, dims, np.empty(0), bits=bits, scale=scale)
        dtype, n_items = _expected_payload(rec)
        raw = r.take(n_items * 4)
        data = np.frombuffer(raw, dtype=dtype).copy()
        if role in _FLOAT_ROLES or role == ROLE_QBIAS:
            data = data.reshape(dims)
        else:
            rows, k = dims
            data = data.reshape(rows, words_per_row(k, bits))
        rec.data = data
        records.append(rec)
    if r.off != len(blob):
        raise ValidationError(f"{path}: trailing bytes after last tensor")
    return records


def find(records, layer: int, role: int) -> TensorRecord:
    for rec in records:
        if rec.layer == layer and rec.role == role:
            return rec
    raise ValidationError(f"container has no tensor for layer {layer} role {role}")
