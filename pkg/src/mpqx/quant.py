"""Quantization math: symmetric scales, integer conversion, STE, bit packing.

All rounding is half-away-from-zero, computed as trunc(x + copysign(0.5, x))
in double precision. The native runtime mirrors this formula exactly, so any
change here breaks cross-implementation bit-exactness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PACKABLE_BITS = (1, 2, 4, 8)
VALID_BITS = (1, 2, 4, 5, 6, 7, 8)


@dataclass(frozen=True)
class QuantParams:
    bits: int
    scale: float
    mode: str = "symmetric-per-tensor"

    def __post_init__(self):
        if self.bits not in VALID_BITS:
            raise ValidationError(f"unsupported bitwidth {self.bits}")
        if not self.scale > 0:
            raise ValidationError(f"scale must be positive, got {self.scale}")


def qmax(bits: int) -> int:
    """Largest representable magnitude: symmetric range excludes -2^(b-1)."""
    return (1 << (bits - 1)) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.trunc(x + np.copysign(0.5, x))


def sequential_sum(x: np.ndarray) -> float:
    """Left-to-right double summation, matching a plain C accumulation loop."""
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        return 0.0
    return float(np.cumsum(flat)[-1])


def compute_scale(x: np.ndarray, bits: int) -> QuantParams:
    """Symmetric per-tensor scale: max|x| / (2^(b-1) - 1), or 1 for all-zero x."""
    if bits < 2:
        raise ValidationError("1-bit tensors use binarize(); compute_scale needs bits >= 2")
    x = np.asarray(x)
    if x.size == 0:
        raise ValidationError("cannot compute a scale for an empty tensor")
    m = float(np.max(np.abs(x)))
    scale = m / qmax(bits) if m > 0 else 1.0
    return QuantParams(bits=bits, scale=scale)


def binarize_scale(x: np.ndarray) -> QuantParams:
    x = np.asarray(x)
    if x.size == 0:
        raise ValidationError("cannot binarize an empty tensor")
    m = sequential_sum(np.abs(x)) / x.size
    return QuantParams(bits=1, scale=m if m > 0 else 1.0)


def quantize(x: np.ndarray, p: QuantParams) -> np.ndarray:
    x = np.asarray(x)
    if p.bits == 1:
        return np.where(x >= 0, 1, -1).astype(np.int32)
    q = round_half_away(np.asarray(x, dtype=np.float64) / p.scale)
    lim = qmax(p.bits)
    return np.clip(q, -lim, lim).astype(np.int32)


def dequantize(q: np.ndarray, p: QuantParams) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * p.scale


def quantize_tensor(x: np.ndarray, bits: int):
    """Convenience: scale + quantize in one call. Returns (q, params)."""
    p = binarize_scale(x) if bits == 1 else compute_scale(x, bits)
    return quantize(x, p), p


def fake_quant(x: np.ndarray, bits: int):
    """Quantize-dequantize for QAT forward passes.

    Returns (y, pass_mask). The mask marks coordinates where the straight
    through estimator lets gradients flow: |x| <= scale * qmax for b >= 2,
    |x| <= scale for the binary case.
    """
    x = np.asarray(x, dtype=np.float64)
    q, p = quantize_tensor(x, bits)
    y = dequantize(q, p)
    if bits == 1:
        mask = np.abs(x) <= p.scale
    else:
        mask = np.abs(x) <= p.scale * qmax(bits)
    return y, mask


def fake_quant_rows(x: np.ndarray, bits: int):
    """Per-sample fake quantization along axis 0, mirroring the deployed
    dynamic per-tensor activation quantization (batch size 1 at inference)."""
    x = np.asarray(x, dtype=np.float64)
    flat = np.abs(x.reshape(x.shape[0], -1))
    if bits == 1:
        s = flat.mean(axis=1)
        s = np.where(s > 0, s, 1.0).reshape((-1,) + (1,) * (x.ndim - 1))
        y = np.where(x >= 0, s, -s)
        return y, np.abs(x) <= s
    s = flat.max(axis=1) / qmax(bits)
    s = np.where(s > 0, s, 1.0).reshape((-1,) + (1,) * (x.ndim - 1))
    q = np.clip(round_half_away(x / s), -qmax(bits), qmax(bits))
    return q * s, np.abs(x) <= s * qmax(bits)


# ---------------------------------------------------------------------------
# Sub-byte packing into little-endian 32-bit words.
# Element i of a row sits at bit offset (i*bits) % 32 of word i*bits // 32.
# 1-bit uses the XNOR encoding: bit 0 -> +1, bit 1 -> -1, so zero padding
# decodes to +1 lanes.
# ---------------------------------------------------------------------------


@dataclass
class PackedTensor:
    bits: int
    length: int
    words: np.ndarray  # uint32

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.uint32)


def _encode_elements(q: np.ndarray, bits: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.int64)
    if bits == 1:
        bad = ~np.isin(q, (-1, 1))
        if bad.any():
            raise ValidationError("1-bit packing needs values in {-1, +1}")
        return (q < 0).astype(np.uint32)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if q.size and (q.min() < lo or q.max() > hi):
        raise ValidationError(f"element outside {bits}-bit two's-complement range")
    return (q & ((1 << bits) - 1)).astype(np.uint32)


def pack(q: np.ndarray, bits: int) -> PackedTensor:
    if bits not in PACKABLE_BITS:
        raise ValidationError(f"packing supports bits in {PACKABLE_BITS}, got {bits}")
    q = np.asarray(q).reshape(-1)
    enc = _encode_elements(q, bits)
    per_word = 32 // bits
    n_words = (q.size + per_word - 1) // per_word
    padded = np.zeros(n_words * per_word, dtype=np.uint32)
    padded[: q.size] = enc
    shifts = (np.arange(per_word, dtype=np.uint32) * bits).astype(np.uint32)
    words = (padded.reshape(n_words, per_word) << shifts).astype(np.uint64).sum(axis=1)
    return PackedTensor(bits=bits, length=q.size, words=words.astype(np.uint32))


def unpack(t: PackedTensor) -> np.ndarray:
    per_word = 32 // t.bits
    shifts = (np.arange(per_word, dtype=np.uint32) * t.bits).astype(np.uint32)
    mask = np.uint32((1 << t.bits) - 1)
    fields = ((t.words[:, None] >> shifts) & mask).reshape(-1)[: t.length]
    if t.bits == 1:
        return np.where(fields == 0, 1, -1).astype(np.int32)
    vals = fields.astype(np.int64)
    sign_bit = 1 << (t.bits - 1)
    vals = np.where(vals & sign_bit, vals - (1 << t.bits), vals)
    return vals.astype(np.int32)


def pack_rows(q: np.ndarray, bits: int) -> np.ndarray:
    """Pack each row of a 2-D int matrix independently; returns uint32 [rows, words]."""
    q = np.asarray(q)
    if q.ndim != 2:
        raise ValidationError("pack_rows expects a 2-D matrix")
    rows = [pack(row, bits).words for row in q]
    return np.stack(rows) if rows else np.zeros((0, 0), dtype=np.uint32)


def fold_bias(bias: np.ndarray, w_scale: float) -> np.ndarray:
    """Integer bias with the weight scale folded in: round(b / s_w) as int32.

    The activation scale half of the usual s_w*s_a folding is applied at
    inference time because activation scales are dynamic.
    """
    b = round_half_away(np.asarray(bias, dtype=np.float64) / w_scale)
    lim = np.int64(2**31 - 1)
    if np.any(np.abs(b) > lim):
        raise ValidationError("bias does not fit in int32 after scale folding")
    return b.astype(np.int32)
