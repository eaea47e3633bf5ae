"""Parametric cycle-count simulators used as ground truth for proxy fitting.

Two archetypes: a bit-serial systolic array (compute scales with bw*ba) and a
SIMD-extended CPU (compute scales with 32/max(bw,ba) lanes, plus load, dynamic
quantization, im2col and cache-penalty terms). Parameter values shipped in
data/*.json are calibration constants for the desk-scale acceptance envelopes,
not measurements of any real device.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .model_ir import KIND_CONV2D, KIND_LINEAR, NetworkIR, QuantScheme, make_conv2d, make_linear

ARCH_SYSTOLIC = "systolic"
ARCH_SIMD_CPU = "simd-cpu"

_CPU_PACKABLE = (1, 2, 4, 8)
_SYSTOLIC_NATIVE = (2, 4, 8)


@dataclass(frozen=True)
class HwConfig:
    hardware_id: str
    archetype: str
    # systolic
    pe_rows: int = 0
    pe_cols: int = 0
    dma_cost_per_word: float = 0.0
    # simd-cpu
    variant: str = ""
    load_cost: float = 0.0
    dcache_bytes: int = 0
    cache_penalty: float = 1.0
    issue_width: int = 1
    quant_cost: float = 0.0
    im2col_cost: float = 0.0
    # shared
    fixed_layer_cost: float = 0.0

    def validate(self):
        if self.archetype == ARCH_SYSTOLIC:
            if min(self.pe_rows, self.pe_cols) <= 0 or self.dma_cost_per_word <= 0:
                raise ValidationError("systolic config needs positive PE dims and DMA cost")
        elif self.archetype == ARCH_SIMD_CPU:
            if self.load_cost <= 0 or self.quant_cost <= 0 or self.im2col_cost <= 0:
                raise ValidationError("simd-cpu config needs positive cost parameters")
            if self.issue_width < 1 or self.cache_penalty < 1 or self.dcache_bytes < 0:
                raise ValidationError("bad issue width / cache parameters")
        else:
            raise ValidationError(f"unknown archetype {self.archetype!r}")
        if self.fixed_layer_cost <= 0:
            raise ValidationError("fixed_layer_cost must be positive")
        return self


def load_hw_config(source) -> HwConfig:
    """Load a config from a JSON path or a builtin name (tiny/small/high/systolic)."""
    builtin = {
        "tiny": "cpu_tiny.json",
        "small": "cpu_small.json",
        "high": "cpu_high.json",
        "systolic": "systolic.json",
    }
    if isinstance(source, str) and source.lower() in builtin:
        text = resources.files("mpqx.data").joinpath(builtin[source.lower()]).read_text()
    else:
        p = Path(source)
        if not p.exists():
            raise ValidationError(f"hardware config not found: {source}")
        text = p.read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"bad hardware config JSON: {e}") from None
    known = {f for f in HwConfig.__dataclass_fields__}
    return HwConfig(**{k: v for k, v in obj.items() if k in known}).validate()


def _cpu_effective(b: int) -> int:
    # 5/6/7-bit data is stored and computed as bytes on the SIMD CPU.
    return b if b in _CPU_PACKABLE else 8


def _systolic_effective(b: int) -> int:
    for native in _SYSTOLIC_NATIVE:
        if b <= native:
            return native
    return 8


def _layer_cycles(layer, bw: int, ba: int, hw: HwConfig) -> float:
    if hw.archetype == ARCH_SIMD_CPU:
        ew, ea = _cpu_effective(bw), _cpu_effective(ba)
        lanes = 32 // max(ew, ea)
        mac = math.ceil(layer.macs / lanes / hw.issue_width)
        weight_bytes = math.ceil(ew * layer.weight_count / 8)
        penalty = hw.cache_penalty if weight_bytes > hw.dcache_bytes else 1.0
        load = hw.load_cost * (ea + ew) * layer.macs / 32.0 * penalty
        quant = hw.quant_cost * layer.activation_count
        lowering = 0.0
        if layer.kind == KIND_CONV2D:
            patch_elements = layer.macs // layer.out_shape[0]
            lowering = hw.im2col_cost * patch_elements
        return mac + load + quant + lowering + hw.fixed_layer_cost
    ew, ea = _systolic_effective(bw), _systolic_effective(ba)
    compute = math.ceil(layer.macs * ew * ea / (hw.pe_rows * hw.pe_cols * 64))
    dma = hw.dma_cost_per_word * ((ea + ew) * layer.macs + 32 * layer.out_elements) / 32.0
    return compute + dma + hw.fixed_layer_cost


def simulate(network: NetworkIR, scheme: QuantScheme, hw: HwConfig) -> int:
    """Deterministic end-to-end cycle count for a quantized network."""
    if len(scheme) != network.n_layers:
        raise ValidationError("scheme length does not match network")
    hw.validate()
    total = 0.0
    for layer, (bw, ba) in zip(network.layers, scheme):
        total += _layer_cycles(layer, bw, ba, hw)
    return int(math.ceil(total))


def scalar_baseline_cycles(network: NetworkIR, hw: HwConfig) -> int:
    """8-bit inference on the unextended CPU: one MAC per cycle pair of
    element loads, no packing. Reference point for SIMD speedup envelopes."""
    if hw.archetype != ARCH_SIMD_CPU:
        raise ValidationError("scalar baseline only defined for simd-cpu configs")
    total = 0.0
    for layer in network.layers:
        mac = math.ceil(layer.macs / hw.issue_width)
        weight_bytes = layer.weight_count  # 8-bit, unpacked
        penalty = hw.cache_penalty if weight_bytes > hw.dcache_bytes else 1.0
        load = hw.load_cost * 2.0 * layer.macs * penalty
        quant = hw.quant_cost * layer.activation_count
        lowering = 0.0
        if layer.kind == KIND_CONV2D:
            lowering = hw.im2col_cost * (layer.macs // layer.out_shape[0])
        total += mac + load + quant + lowering + hw.fixed_layer_cost
    return int(math.ceil(total))


# ---------------------------------------------------------------------------
# Kernel benchmarking: single-layer synthetic networks measured across every
# bitwidth pair of the configured set.
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkPlan:
    bitwidths: tuple
    matmul_sizes: tuple  # (m, k, n) triples
    conv_sizes: tuple    # (ic, h, w, oc, kh, kw) tuples
    ordered_pairs: bool = False

    def pairs(self):
        bits = sorted(self.bitwidths)
        if self.ordered_pairs:
            return [(bw, ba) for bw in bits for ba in bits]
        return [(bw, ba) for i, bw in enumerate(bits) for ba in bits[: i + 1]]


def load_plan(source) -> BenchmarkPlan:
    if source is None or (isinstance(source, str) and source.lower() == "default"):
        text = resources.files("mpqx.data").joinpath("bench_plan_default.json").read_text()
    else:
        p = Path(source)
        if not p.exists():
            raise ValidationError(f"benchmark plan not found: {source}")
        text = p.read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"bad benchmark plan JSON: {e}") from None
    return BenchmarkPlan(
        bitwidths=tuple(obj["bitwidths"]),
        matmul_sizes=tuple(tuple(s) for s in obj.get("matmul_sizes", ())),
        conv_sizes=tuple(tuple(s) for s in obj.get("conv_sizes", ())),
        ordered_pairs=bool(obj.get("ordered_pairs", False)),
    )


def benchmark_layer(kernel_kind: str, size) -> NetworkIR:
    if kernel_kind == KIND_LINEAR:
        m, k, n = size
        layer = make_linear(0, (m, k) if m > 1 else (k,), (m, n) if m > 1 else (n,))
    elif kernel_kind == KIND_CONV2D:
        ic, h, w, oc, kh, kw = size
        layer = make_conv2d(0, (ic, h, w), (kh, kw), out_channels=oc)
    else:
        raise ValidationError(f"unknown kernel kind {kernel_kind!r}")
    return NetworkIR(name=f"bench-{kernel_kind}", layers=[layer])


def run_kernel_benchmarks(hw: HwConfig, plan: BenchmarkPlan) -> "HardwareProfile":
    from .proxy import HardwareProfile, ProfileRecord  # avoid import cycle

    if not plan.matmul_sizes and not plan.conv_sizes:
        raise ValidationError("benchmark plan is empty")
    records = []
    for kind, sizes in ((KIND_LINEAR, plan.matmul_sizes), (KIND_CONV2D, plan.conv_sizes)):
        for size in sizes:
            net = benchmark_layer(kind, size)
            for bw, ba in plan.pairs():
                cycles = simulate(net, QuantScheme(((bw, ba),)), hw)
                records.append(
                    ProfileRecord(
                        kernel=kind,
                        bw=bw,
                        ba=ba,
                        dims=tuple(size),
                        macs=net.layers[0].macs,
                        cycles=cycles,
                    )
                )
    return HardwareProfile(hardware_id=hw.hardware_id, records=records)
