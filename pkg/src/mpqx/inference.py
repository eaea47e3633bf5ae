"""Integer inference executor with dynamic per-tensor activation quantization.

This is the semantic twin of the native runtime: float32 activations, double
precision scale math, half-away-from-zero rounding, int32 accumulators, bias
rescaled into the accumulator domain per sample. Any arithmetic change here
must be replicated in the C runtime or cross-language bit-exactness breaks.

Per layer:  x_f32 -> dynamic scale -> int quantize -> (im2col) -> int matmul
            -> + round(bias_int * s_b / (s_w * s_a)) -> dequant f32 -> relu

The final layer's accumulators (after bias add) are the integer logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import ValidationError
from .kernels import INT32_MAX, INT32_MIN, im2col_indices
from .model_ir import KIND_CONV2D, KIND_LINEAR, NetworkIR, QuantScheme
from .quant import fold_bias, qmax, quantize_tensor, round_half_away

PACKABLE = (1, 2, 4, 8)


def packable_width(b: int) -> int:
    """5/6/7-bit data is widened to bytes for storage and compute."""
    return b if b in PACKABLE else 8


@dataclass
class QLayer:
    desc: object
    w_int: np.ndarray  # int32 [rows, k] in lowered 2-D form
    s_w: float
    bw: int
    ba: int
    b_int: np.ndarray | None = None
    s_b: float | None = None


def quantize_network(network: NetworkIR, scheme: QuantScheme) -> list[QLayer]:
    if network.weights is None:
        raise ValidationError(f"network {network.name} has no trained weights")
    if len(scheme) != network.n_layers:
        raise ValidationError("scheme length does not match network")
    qlayers = []
    for desc, (bw, ba) in zip(network.layers, scheme):
        w = network.weights.weight(desc.index)
        q, p = quantize_tensor(w, bw)
        rows = w.shape[0]
        q2d = q.reshape(rows, -1)
        bias = network.weights.bias(desc.index)
        b_int = s_b = None
        if bias is not None:
            b_int = fold_bias(bias, p.scale)
            s_b = p.scale
        qlayers.append(QLayer(desc=desc, w_int=q2d, s_w=p.scale, bw=bw, ba=ba,
                              b_int=b_int, s_b=s_b))
    return qlayers


def qlayers_from_container(network: NetworkIR, path, scheme: QuantScheme) -> list[QLayer]:
    """Rebuild executor layers from an exported quantized-weights container,
    so scales are the float32 values the native runtime will read. `scheme`
    holds the effective (storage) bitwidths; the container's weight bits must
    agree with its weight entries."""
    from .quant import PackedTensor, unpack

    records = container.read_container(path)
    qlayers = []
    for desc, (bw, ba) in zip(network.layers, scheme):
        wrec = container.find(records, desc.index, container.ROLE_QWEIGHT)
        if wrec.bits != packable_width(bw):
            raise ValidationError(
                f"layer {desc.index}: container stores {wrec.bits}-bit weights, "
                f"scheme says {bw}"
            )
        rows, k = wrec.dims
        ints = np.stack([
            unpack(PackedTensor(bits=wrec.bits, length=k, words=wrec.data[r]))
            for r in range(rows)
        ])
        b_int = s_b = None
        try:
            brec = container.find(records, desc.index, container.ROLE_QBIAS)
            b_int = brec.data.astype(np.int32)
            s_b = float(np.float32(brec.scale))
        except ValidationError:
            pass
        qlayers.append(QLayer(desc=desc, w_int=ints.astype(np.int32),
                              s_w=float(np.float32(wrec.scale)),
                              bw=wrec.bits, ba=packable_width(ba),
                              b_int=b_int, s_b=s_b))
    return qlayers


def activation_scales(x: np.ndarray, bits: int) -> np.ndarray:
    """Per-sample dynamic scale over the flattened tensor, float64.

    b >= 2: max|x| / qmax. b == 1: mean|x| via sequential double summation
    (matches the runtime's accumulation loop). All-zero rows get scale 1.
    """
    flat = np.abs(x.reshape(x.shape[0], -1)).astype(np.float32)
    if bits == 1:
        sums = np.cumsum(flat.astype(np.float64), axis=1)[:, -1]
        s = sums / flat.shape[1]
    else:
        s = flat.max(axis=1).astype(np.float64) / float(qmax(bits))
    return np.where(s > 0, s, 1.0)


def quantize_activations(x: np.ndarray, bits: int, scales: np.ndarray) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1).astype(np.float32)
    if bits == 1:
        return np.where(flat >= 0, 1, -1).astype(np.int32)
    v = flat.astype(np.float64) / scales[:, None]
    lim = qmax(bits)
    return np.clip(round_half_away(v), -lim, lim).astype(np.int32)


def _check_i32(acc: np.ndarray, what: str):
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise ValidationError(f"{what}: int32 accumulator overflow")


def forward_int(qlayers: list[QLayer], x: np.ndarray, trace=None):
    """Run the integer pipeline on a float32 batch; returns int32 logits.

    Accumulators are kept as [batch, rows, units] where rows is 1 for vector
    Linear layers, the leading row count for matrix Linear layers, and the
    output pixel count for convolutions. `trace`, when a list, collects
    (acc, scale) pairs per layer for debugging.
    """
    h = np.asarray(x, dtype=np.float32)
    if h.ndim == len(qlayers[0].desc.in_shape):
        h = h[None, ...]
    B = h.shape[0]
    acc = None
    for li, ql in enumerate(qlayers):
        desc = ql.desc
        if desc.kind == KIND_CONV2D and ql.ba == 1 and (desc.pad[0] or desc.pad[1]):
            raise ValidationError("1-bit activations cannot be zero-padded")
        s_a = activation_scales(h, ql.ba)
        q_a = quantize_activations(h, ql.ba, s_a)
        if desc.kind == KIND_LINEAR:
            k = desc.in_shape[-1]
            rows = int(np.prod(desc.in_shape[:-1])) if len(desc.in_shape) > 1 else 1
            a3 = q_a.reshape(B, rows, k).astype(np.int64)
        else:
            idx = im2col_indices(desc)
            mask, safe = idx >= 0, np.clip(idx, 0, None)
            a3 = np.where(mask, q_a[:, safe], 0).astype(np.int64)  # [B, P, K]
        acc = np.einsum("brk,nk->brn", a3, ql.w_int.astype(np.int64))
        _check_i32(acc, f"layer {desc.index} matmul")
        if ql.b_int is not None:
            factor = ql.s_b / (ql.s_w * s_a)  # [B]
            b_acc = round_half_away(
                ql.b_int.astype(np.float64) * factor[:, None]
            ).astype(np.int64)
            acc = acc + b_acc[:, None, :]
            _check_i32(acc, f"layer {desc.index} bias add")
        if trace is not None:
            trace.append((acc.copy(), s_a.copy()))
        if li == len(qlayers) - 1:
            break
        deq_scale = ql.s_w * s_a  # [B] doubles
        y = (acc.astype(np.float64) * deq_scale[:, None, None]).astype(np.float32)
        if desc.kind == KIND_CONV2D:
            oc, oh, ow = desc.out_shape
            h = y.transpose(0, 2, 1).reshape(B, oc, oh, ow)
        else:
            h = y.reshape(B, -1)  # row-major [rows, units] matches out_shape
        if desc.activation == "relu":
            h = np.maximum(h, np.float32(0.0))
    # logits: accumulators of the last layer, flattened per sample
    last = qlayers[-1]
    if last.desc.kind == KIND_CONV2D:
        out = acc.transpose(0, 2, 1).reshape(B, -1)  # channel-major like y
    else:
        out = acc.reshape(B, -1)
    out = out.astype(np.int64)
    _check_i32(out, "logits")
    return out.astype(np.int32)
