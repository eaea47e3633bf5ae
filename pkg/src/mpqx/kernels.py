"""Bit-exact emulation of the 10 mixed-precision SIMD dot-product ops plus
matmul/conv2d kernels in scalar-reference and packed (word-parallel) variants.

The packed variants consume the same 32-bit word layout as quant.pack and
must agree with the scalar reference exactly; the differential tests enforce
this against a big-integer oracle as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model_ir import KIND_CONV2D, LayerDesc
from .quant import pack_rows

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


@dataclass(frozen=True)
class DotPOp:
    bw: int  # rS1 element width (the wider operand)
    ba: int  # rS2 element width
    name: str

    @property
    def lanes(self) -> int:
        return 32 // self.bw


DOTP_OPS = {
    (bw, ba): DotPOp(bw, ba, f"DotP.{bw}x{ba}")
    for bw in (8, 4, 2, 1)
    for ba in (8, 4, 2, 1)
    if ba <= bw
}


def dotp_op(b1: int, b2: int) -> DotPOp:
    """The instruction for an operand pair; the wider width goes to rS1."""
    key = (max(b1, b2), min(b1, b2))
    if key not in DOTP_OPS:
        raise ValidationError(f"no dot-product instruction for widths {b1}x{b2}")
    return DOTP_OPS[key]


@dataclass
class KernelStats:
    dotp_count: int = 0
    scalar_mac_count: int = 0
    pack_ops: int = 0
    quant_ops: int = 0

    def merge(self, other: "KernelStats") -> "KernelStats":
        return KernelStats(
            self.dotp_count + other.dotp_count,
            self.scalar_mac_count + other.scalar_mac_count,
            self.pack_ops + other.pack_ops,
            self.quant_ops + other.quant_ops,
        )


def _decode_lanes(word: int, bits: int, count: int) -> np.ndarray:
    """Signed values of the low `count` fields of `bits` bits each."""
    shifts = np.arange(count, dtype=np.uint64) * bits
    fields = (np.uint64(word) >> shifts) & np.uint64((1 << bits) - 1)
    if bits == 1:
        return np.where(fields == 0, 1, -1).astype(np.int64)
    vals = fields.astype(np.int64)
    sign = 1 << (bits - 1)
    return np.where(vals & sign, vals - (1 << bits), vals)


def _popcount32(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    x = x - ((x >> np.uint64(1)) & np.uint64(0x55555555))
    x = (x & np.uint64(0x33333333)) + ((x >> np.uint64(2)) & np.uint64(0x33333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F)
    return ((x * np.uint64(0x01010101)) >> np.uint64(24)).astype(np.int64) & 0x3F


def dotp(op: DotPOp, rs1: int, rs2: int) -> int:
    """One SIMD dot-product instruction over two packed 32-bit words.

    rs1 holds `lanes` elements at op.bw bits; rs2 holds `lanes` elements at
    op.ba bits in its low lanes*ba bits, sign-extended on extraction.
    """
    rs1 &= 0xFFFFFFFF
    rs2 &= 0xFFFFFFFF
    if (op.bw, op.ba) not in DOTP_OPS:
        raise ValidationError(f"invalid dot-product op {op.bw}x{op.ba}")
    if op.bw == 1:
        return 32 - 2 * int(_popcount32(rs1 ^ rs2))
    a = _decode_lanes(rs1, op.bw, op.lanes)
    b = _decode_lanes(rs2, op.ba, op.lanes)
    return int(np.dot(a, b))


def _check_range(x: np.ndarray, bits: int, what: str):
    x = np.asarray(x)
    if x.size == 0:
        return
    if bits == 1:
        if not np.isin(x, (-1, 1)).all():
            raise ValidationError(f"{what}: 1-bit values must be +/-1")
        return
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if x.min() < lo or x.max() > hi:
        raise ValidationError(f"{what}: values exceed {bits}-bit range")


def matmul_ref(a: np.ndarray, w: np.ndarray, bw: int, ba: int) -> np.ndarray:
    """Exact integer GEMM, out[m,n] = sum_k a[m,k] * w[n,k], int32 accumulate.

    a carries activations at ba bits, w carries weights at bw bits.
    """
    a = np.asarray(a, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    if a.ndim != 2 or w.ndim != 2 or a.shape[1] != w.shape[1]:
        raise ValidationError(f"matmul shape mismatch: {a.shape} x {w.shape}")
    _check_range(a, ba, "activations")
    _check_range(w, bw, "weights")
    acc = a @ w.T
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise ValidationError("matmul accumulator overflowed int32")
    return acc.astype(np.int32)


def _packed_dot_row(w_words, a_words, k, bw, ba):
    """Dot product of one weight row against one activation row, via dotp.

    Both rows are densely packed at their own widths. The wider operand's
    words feed rS1 directly; groups of `lanes` elements of the narrower
    operand are sliced out of its packed row to form rS2 words.
    """
    op = dotp_op(bw, ba)
    lanes = op.lanes
    n_groups = (k + lanes - 1) // lanes
    if bw >= ba:
        wide_words, narrow_words, narrow_bits = w_words, a_words, ba
    else:
        wide_words, narrow_words, narrow_bits = a_words, w_words, bw
    acc = 0
    group_bits = lanes * narrow_bits
    for g in range(n_groups):
        rs1 = int(wide_words[g])
        bit_off = g * group_bits
        widx, boff = bit_off // 32, bit_off % 32
        chunk = int(narrow_words[widx]) >> boff
        if boff + group_bits > 32 and widx + 1 < len(narrow_words):
            chunk |= int(narrow_words[widx + 1]) << (32 - boff)
        rs2 = chunk & ((1 << group_bits) - 1) & 0xFFFFFFFF
        acc += dotp(op, rs1, rs2)
    if bw == 1 and ba == 1:
        acc -= n_groups * lanes - k  # zero-pad lanes decode to +1 * +1
    return acc, n_groups


def matmul_packed(a_words: np.ndarray, w_words: np.ndarray, bw: int, ba: int,
                  k: int) -> tuple[np.ndarray, KernelStats]:
    """Word-parallel GEMM over packed rows; exact match with matmul_ref.

    a_words: uint32 [m, words_a] activation rows packed at ba bits.
    w_words: uint32 [n, words_w] weight rows packed at bw bits.
    """
    a_words = np.asarray(a_words, dtype=np.uint32)
    w_words = np.asarray(w_words, dtype=np.uint32)
    m, n = a_words.shape[0], w_words.shape[0]
    op = dotp_op(bw, ba)
    out = np.zeros((m, n), dtype=np.int64)
    dotp_count = 0
    for i in range(m):
        for j in range(n):
            acc, groups = _packed_dot_row(w_words[j], a_words[i], k, bw, ba)
            out[i, j] = acc
            dotp_count += groups
    if out.size and (out.min() < INT32_MIN or out.max() > INT32_MAX):
        raise ValidationError("matmul accumulator overflowed int32")
    stats = KernelStats(dotp_count=dotp_count, scalar_mac_count=m * n * k,
                        pack_ops=int(a_words.size + w_words.size))
    return out.astype(np.int32), stats


def matmul(a: np.ndarray, w: np.ndarray, bw: int, ba: int,
           variant: str = "ref") -> tuple[np.ndarray, KernelStats]:
    """Integer GEMM on unpacked values; `packed` routes through the word path."""
    a = np.asarray(a)
    w = np.asarray(w)
    if variant == "ref":
        out = matmul_ref(a, w, bw, ba)
        m, k = a.shape
        n = w.shape[0]
        op = dotp_op(bw, ba)
        stats = KernelStats(scalar_mac_count=m * n * k,
                            dotp_count=m * n * ((k + op.lanes - 1) // op.lanes))
        return out, stats
    if variant == "packed":
        _check_range(a, ba, "activations")
        _check_range(w, bw, "weights")
        return matmul_packed(pack_rows(a, ba), pack_rows(w, bw), bw, ba, a.shape[1])
    raise ValidationError(f"unknown matmul variant {variant!r}")


def im2col_indices(layer: LayerDesc):
    """(row, col) -> flat input index map for a conv layer; -1 marks padding."""
    ic, h, w = layer.in_shape
    kh, kw = layer.kernel
    sh, sw = layer.stride
    ph, pw = layer.pad
    oc, oh, ow = layer.out_shape
    idx = np.full((oh * ow, ic * kh * kw), -1, dtype=np.int64)
    for oy in range(oh):
        for ox in range(ow):
            r = oy * ow + ox
            for c_in in range(ic):
                for ky in range(kh):
                    for kx in range(kw):
                        iy = oy * sh + ky - ph
                        ix = ox * sw + kx - pw
                        col = (c_in * kh + ky) * kw + kx
                        if 0 <= iy < h and 0 <= ix < w:
                            idx[r, col] = (c_in * h + iy) * w + ix
    return idx


def im2col(x: np.ndarray, layer: LayerDesc) -> np.ndarray:
    """Lower a CHW tensor to the patch matrix [oh*ow, ic*kh*kw]."""
    x = np.asarray(x)
    flat = x.reshape(-1)
    idx = im2col_indices(layer)
    out = np.where(idx >= 0, flat[np.clip(idx, 0, None)], 0)
    return out.astype(x.dtype)


def conv2d(x: np.ndarray, w: np.ndarray, layer: LayerDesc, bw: int, ba: int,
           variant: str = "ref") -> tuple[np.ndarray, KernelStats]:
    """Conv2D by im2col lowering followed by the selected matmul variant."""
    if layer.kind != KIND_CONV2D:
        raise ValidationError("conv2d needs a Conv2D layer descriptor")
    x = np.asarray(x)
    w = np.asarray(w)
    if tuple(x.shape) != layer.in_shape:
        raise ValidationError(f"input shape {x.shape} != layer {layer.in_shape}")
    oc = layer.out_shape[0]
    if tuple(w.shape) != (oc, layer.in_shape[0], *layer.kernel):
        raise ValidationError(f"weight shape {w.shape} does not match layer")
    if ba == 1 and (layer.pad[0] or layer.pad[1]):
        raise ValidationError("1-bit activations cannot be zero-padded")
    cols = im2col(x, layer)
    w2d = w.reshape(oc, -1)
    out, stats = matmul(cols, w2d, bw, ba, variant)
    oh, ow = layer.out_shape[1], layer.out_shape[2]
    return out.T.reshape(oc, oh, ow), stats
