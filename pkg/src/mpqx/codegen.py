"""Deployment backend: lowers a network + scheme + trained weights into
standalone C source (against the native kernel runtime), a quantized weights
container, and a static arena buffer plan.

Emission is fully deterministic: regenerating with identical inputs yields
byte-identical files. 5/6/7-bit layers are stored and computed as 8-bit
(values and scales keep the original width) and flagged with a widening note.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import ValidationError
from .inference import packable_width, quantize_network
from .model_ir import KIND_CONV2D, KIND_LINEAR, NetworkIR, QuantScheme


@dataclass
class BufferSpec:
    name: str
    size: int        # bytes
    start: int       # first timeline step the buffer is live
    end: int         # last live step (inclusive)
    offset: int = -1


@dataclass
class KernelCall:
    layer: int
    kind: str
    bw: int
    ba: int
    eff_bw: int
    eff_ba: int
    dims: dict
    buffers: dict
    widened: bool = False

    def to_json(self):
        return {
            "layer": self.layer,
            "kind": self.kind,
            "bw": self.bw,
            "ba": self.ba,
            "eff_bw": self.eff_bw,
            "eff_ba": self.eff_ba,
            "dims": self.dims,
            "buffers": self.buffers,
            "widened": self.widened,
        }


@dataclass
class DeployPlan:
    network: NetworkIR
    scheme: QuantScheme
    calls: list = field(default_factory=list)
    buffers: dict = field(default_factory=dict)
    arena_bytes: int = 0
    qlayers: list = field(default_factory=list)

    def to_json(self):
        return {
            "network": self.network.name,
            "scheme": self.scheme.to_json(),
            "arena_bytes": self.arena_bytes,
            "calls": [c.to_json() for c in self.calls],
            "buffers": {
                name: {"size": b.size, "offset": b.offset, "live": [b.start, b.end]}
                for name, b in sorted(self.buffers.items())
            },
        }


def _allocate(buffers: list[BufferSpec]) -> int:
    """Greedy interval placement: largest-first, lowest non-overlapping offset."""
    placed = []
    for buf in sorted(buffers, key=lambda b: (-b.size, b.name)):
        conflicts = [
            p for p in placed if not (p.end < buf.start or p.start > buf.end)
        ]
        conflicts.sort(key=lambda p: p.offset)
        offset = 0
        for p in conflicts:
            if offset + buf.size <= p.offset:
                break
            offset = max(offset, p.offset + p.size)
        buf.offset = offset
        placed.append(buf)
    return max((b.offset + b.size for b in buffers), default=0)


def _align4(n: int) -> int:
    return (n + 3) & ~3


def build_plan(network: NetworkIR, scheme: QuantScheme) -> DeployPlan:
    """One call per layer: dynamic quantize -> (im2col) -> pack -> matmul ->
    bias add -> dequantize; all intermediates live in one static arena."""
    if network.n_layers == 0:
        raise ValidationError("cannot build a plan for an empty network")
    if network.weights is None:
        raise ValidationError(f"network {network.name} has no trained weights")
    if len(scheme) != network.n_layers:
        raise ValidationError("scheme length does not match network")
    qlayers = quantize_network(network, scheme)
    plan = DeployPlan(network=network, scheme=scheme, qlayers=qlayers)
    buffers = []

    def add(name, size, start, end):
        spec = BufferSpec(name, _align4(size), start, end)
        buffers.append(spec)
        plan.buffers[name] = spec
        return name

    prev_out = None
    for i, (desc, ql) in enumerate(zip(network.layers, qlayers)):
        t = i * 6  # quantize, im2col, pack, matmul, bias, dequant
        eff_bw, eff_ba = packable_width(ql.bw), packable_width(ql.ba)
        if desc.kind == KIND_CONV2D and eff_ba == 1 and (desc.pad[0] or desc.pad[1]):
            raise ValidationError("1-bit activations cannot be zero-padded")
        n_in = int(np.prod(desc.in_shape))
        if desc.kind == KIND_LINEAR:
            rows = 1
            k = desc.in_shape[-1]
            n_out_units = desc.out_shape[-1]
            if len(desc.in_shape) > 1:
                rows = int(np.prod(desc.in_shape[:-1]))
        else:
            oc, oh, ow = desc.out_shape
            rows = oh * ow
            k = desc.in_shape[0] * desc.kernel[0] * desc.kernel[1]
            n_out_units = oc
        words_per_row = (k * eff_ba + 31) // 32
        if prev_out is None:
            act_in = add(f"act{i}", n_in * 4, 0, t)
        else:
            act_in = prev_out
            plan.buffers[act_in].end = t
        q_name = add(f"q{i}", n_in, t, t + 2)
        cols_name = None
        if desc.kind == KIND_CONV2D:
            cols_name = add(f"cols{i}", rows * k, t + 1, t + 2)
        aw_name = add(f"aw{i}", rows * words_per_row * 4, t + 2, t + 3)
        acc_name = add(f"acc{i}", rows * n_out_units * 4, t + 3, t + 5)
        is_last = i == network.n_layers - 1
        out_name = None
        if not is_last:
            n_next = int(np.prod(desc.out_shape))
            out_name = add(f"act{i + 1}", n_next * 4, t + 5, t + 6)
            prev_out = out_name
        call = KernelCall(
            layer=i,
            kind=desc.kind,
            bw=ql.bw,
            ba=ql.ba,
            eff_bw=eff_bw,
            eff_ba=eff_ba,
            dims={
                "rows": rows,
                "k": k,
                "n": n_out_units,
                "in_shape": list(desc.in_shape),
                "out_shape": list(desc.out_shape),
                **({"kernel": list(desc.kernel), "stride": list(desc.stride),
                    "pad": list(desc.pad)} if desc.kind == KIND_CONV2D else {}),
            },
            buffers={
                "act_in": act_in,
                "q": q_name,
                **({"cols": cols_name} if cols_name else {}),
                "aw": aw_name,
                "acc": acc_name,
                **({"act_out": out_name} if out_name else {}),
            },
            widened=(ql.bw != eff_bw or ql.ba != eff_ba),
        )
        plan.calls.append(call)
    plan.arena_bytes = _allocate(buffers)
    return plan


def _weights_records(plan: DeployPlan):
    from .quant import pack_rows

    records = []
    for ql in plan.qlayers:
        eff = packable_width(ql.bw)
        rows, k = ql.w_int.shape
        words = pack_rows(ql.w_int, eff)
        records.append(container.TensorRecord(
            ql.desc.index, container.ROLE_QWEIGHT, (rows, k), words,
            bits=eff, scale=ql.s_w,
        ))
        if ql.b_int is not None:
            records.append(container.TensorRecord(
                ql.desc.index, container.ROLE_QBIAS, ql.b_int.shape, ql.b_int,
                bits=32, scale=ql.s_b,
            ))
    return records


def _gen_model_c(plan: DeployPlan) -> str:
    L = []
    L.append('#include "mp_runtime.h"')
    L.append('#include "model.h"')
    L.append("")
    L.append(f"static uint8_t g_arena[{max(plan.arena_bytes, 4)}];")
    L.append("")
    L.append("size_t model_arena_bytes(void) { return sizeof(g_arena); }")
    L.append(f"int model_input_size(void) {{ return {int(np.prod(plan.network.layers[0].in_shape))}; }}")
    last = plan.calls[-1]
    n_logits = last.dims["rows"] * last.dims["n"]
    L.append(f"int model_output_size(void) {{ return {n_logits}; }}")
    L.append("")
    L.append("int model_run(const rt_model *m, const float *input, int32_t *logits) {")
    for name, buf in sorted(plan.buffers.items()):
        L.append(f"    /* {name}: {buf.size}B @ {buf.offset} live [{buf.start},{buf.end}] */")
    L.append("")

    def ptr(ctype, bufname):
        off = plan.buffers[bufname].offset
        return f"({ctype} *)(g_arena + {off})"

    first_act = plan.calls[0].buffers["act_in"]
    n_in = int(np.prod(plan.network.layers[0].in_shape))
    L.append(f"    float *act0 = {ptr('float', first_act)};")
    L.append(f"    for (int i = 0; i < {n_in}; i++) act0[i] = input[i];")
    for call in plan.calls:
        d = call.dims
        b = call.buffers
        i = call.layer
        is_last = call.layer == plan.calls[-1].layer
        L.append("")
        note = " (widened to 8-bit storage)" if call.widened else ""
        L.append(f"    /* layer {i}: {call.kind} W{call.bw}A{call.ba}{note} */")
        L.append("    {")
        L.append(f"        const rt_entry *w = rt_model_entry(m, {i}, RT_ROLE_QWEIGHT);")
        L.append(f"        const rt_entry *bias = rt_model_entry(m, {i}, RT_ROLE_QBIAS);")
        L.append("        if (!w) return RT_ERR_MISSING_TENSOR;")
        L.append(f"        float *xin = {ptr('float', b['act_in'])};")
        L.append(f"        int8_t *q = {ptr('int8_t', b['q'])};")
        L.append(f"        double sa = rt_quantize_dyn(xin, {int(np.prod(plan.network.layers[i].in_shape))}, {call.eff_ba}, q);")
        src = "q"
        if call.kind == KIND_CONV2D:
            ish = d["in_shape"]
            kk = d["kernel"]
            st = d["stride"]
            pd = d["pad"]
            L.append(f"        int8_t *cols = {ptr('int8_t', b['cols'])};")
            L.append(
                f"        rt_im2col_s8(q, {ish[0]}, {ish[1]}, {ish[2]}, "
                f"{kk[0]}, {kk[1]}, {st[0]}, {st[1]}, {pd[0]}, {pd[1]}, cols);"
            )
            src = "cols"
        L.append(f"        uint32_t *aw = {ptr('uint32_t', b['aw'])};")
        L.append(f"        rt_pack_rows({src}, {d['rows']}, {d['k']}, {call.eff_ba}, aw);")
        L.append(f"        int32_t *acc = {ptr('int32_t', b['acc'])};")
        L.append(
            f"        rt_matmul_packed(aw, {d['rows']}, (const uint32_t *)w->data, "
            f"{d['n']}, {d['k']}, {call.eff_bw}, {call.eff_ba}, acc);"
        )
        L.append("        if (bias) {")
        L.append(
            f"            rt_bias_add(acc, {d['rows']}, {d['n']}, "
            "(const int32_t *)bias->data, (double)bias->scale, (double)w->scale, sa);"
        )
        L.append("        }")
        if is_last:
            if call.kind == KIND_CONV2D:
                L.append(f"        rt_transpose_i32(acc, {d['rows']}, {d['n']}, logits);")
            else:
                L.append(f"        for (int j = 0; j < {d['rows'] * d['n']}; j++) logits[j] = acc[j];")
        else:
            out_n = d["rows"] * d["n"]
            L.append(f"        float *xout = {ptr('float', b['act_out'])};")
            if call.kind == KIND_CONV2D:
                L.append(
                    f"        rt_dequant_chw(acc, {d['rows']}, {d['n']}, (double)w->scale, sa, xout);"
                )
            else:
                L.append(f"        rt_dequant(acc, {out_n}, (double)w->scale, sa, xout);")
            if plan.network.layers[i].activation == "relu":
                L.append(f"        rt_relu(xout, {out_n});")
        L.append("    }")
    L.append("    return RT_OK;")
    L.append("}")
    L.append("")
    return "\n".join(L)


_MODEL_H = """\
#ifndef MODEL_H
#define MODEL_H

#include <stddef.h>
#include <stdint.h>
#include "mp_runtime.h"

size_t model_arena_bytes(void);
int model_input_size(void);
int model_output_size(void);
int model_run(const rt_model *m, const float *input, int32_t *logits);

#endif
"""

_MAIN_C = """\
/* Inference harness: ./main <weights.bin> <input.bin>
 * Prints the integer logits, one per line. */
#include <stdio.h>
#include <stdlib.h>
#include "mp_runtime.h"
#include "model.h"

static uint8_t g_weight_arena[MAX_WEIGHT_ARENA];

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s weights.bin input.bin\\n", argv[0]);
        return 1;
    }
    size_t blob_size = 0;
    uint8_t *blob = rt_read_file(argv[1], &blob_size);
    if (!blob) { fprintf(stderr, "cannot read %s\\n", argv[1]); return 1; }
    rt_model model;
    int rc = rt_load_weights(blob, blob_size, &model, g_weight_arena,
                             sizeof(g_weight_arena));
    if (rc != RT_OK) { fprintf(stderr, "weight load failed: %d\\n", rc); return 2; }

    size_t in_size = 0;
    uint8_t *in_blob = rt_read_file(argv[2], &in_size);
    if (!in_blob) { fprintf(stderr, "cannot read %s\\n", argv[2]); return 1; }
    float *input = malloc(sizeof(float) * model_input_size());
    rc = rt_load_input(in_blob, in_size, input, model_input_size());
    if (rc != RT_OK) { fprintf(stderr, "input load failed: %d\\n", rc); return 2; }

    int32_t *logits = malloc(sizeof(int32_t) * model_output_size());
    rc = model_run(&model, input, logits);
    if (rc != RT_OK) { fprintf(stderr, "inference failed: %d\\n", rc); return 3; }
    for (int i = 0; i < model_output_size(); i++) printf("%d\\n", logits[i]);
    free(logits); free(input); free(in_blob); free(blob);
    return 0;
}
"""


def emit_source(plan: DeployPlan, out_dir) -> dict:
    """Write model.c/model.h/main.c/weights.bin/plan.json into out_dir.

    Returns a manifest dict listing every emitted file.
    """
    if not plan.calls:
        raise ValidationError("deploy plan is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = _weights_records(plan)
    container.write_container(out / "weights.bin", records)
    weight_bytes = (out / "weights.bin").stat().st_size
    main_c = _MAIN_C.replace("MAX_WEIGHT_ARENA", str(_align4(weight_bytes + 4096)))
    files = {
        "model.c": _gen_model_c(plan),
        "model.h": _MODEL_H,
        "main.c": main_c,
        "plan.json": json.dumps(plan.to_json(), indent=2, sort_keys=True) + "\n",
    }
    for name, text in files.items():
        (out / name).write_text(text)
    manifest = {
        "files": sorted(list(files) + ["weights.bin"]),
        "arena_bytes": plan.arena_bytes,
        "network": plan.network.name,
        "scheme": plan.scheme.to_json(),
        "widened_layers": [c.layer for c in plan.calls if c.widened],
    }
    (out / "codegen_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def write_input_tensor(x: np.ndarray, path) -> None:
    """Input tensor file: container role 5, float32."""
    x = np.asarray(x, dtype=np.float32)
    container.write_container(path, [
        container.TensorRecord(0, container.ROLE_INPUT, x.shape, x)
    ])


def reference_logits(plan: DeployPlan, weights_path, x: np.ndarray) -> np.ndarray:
    """Primary reference executor: runs the exported artifact (float32 scales)
    through the in-process integer pipeline; the compiled program must match
    this bit-for-bit."""
    from .inference import forward_int, qlayers_from_container

    eff_scheme = QuantScheme(tuple(
        (packable_width(bw), packable_width(ba)) for bw, ba in plan.scheme
    ))
    qlayers = qlayers_from_container(plan.network, weights_path, eff_scheme)
    return forward_int(qlayers, np.asarray(x, dtype=np.float32))
