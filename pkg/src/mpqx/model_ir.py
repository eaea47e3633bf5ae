"""Network intermediate representation: layer descriptors, schemes, weights.

Only straight-line sequential graphs of Conv2D and Linear layers are
supported; anything else is rejected at load time. All MAC accounting
assumes batch size 1 and excludes bias additions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import ValidationError

QAT_BITS = (1, 2, 4, 8)
PTQ_BITS = (4, 5, 6, 7, 8)
ALL_BITS = (1, 2, 4, 5, 6, 7, 8)

KIND_CONV2D = "Conv2D"
KIND_LINEAR = "Linear"


def _as_dims(value, what):
    if isinstance(value, int):
        return (value,)
    try:
        dims = tuple(int(v) for v in value)
    except TypeError:
        raise ValidationError(f"{what} must be an int or a list of ints") from None
    if not dims or any(d <= 0 for d in dims):
        raise ValidationError(f"{what} must contain positive integers, got {value}")
    return dims


def _as_pair(value, what):
    dims = _as_dims(value, what)
    if len(dims) == 1:
        return (dims[0], dims[0])
    if len(dims) != 2:
        raise ValidationError(f"{what} must have one or two entries")
    return dims


@dataclass(frozen=True)
class LayerDesc:
    index: int
    kind: str
    in_shape: tuple
    out_shape: tuple
    kernel: tuple | None = None
    stride: tuple = (1, 1)
    pad: tuple = (0, 0)
    activation: str = "none"
    macs: int = 0
    weight_count: int = 0
    activation_count: int = 0

    @property
    def out_elements(self) -> int:
        return int(np.prod(self.out_shape))


def make_linear(index, in_shape, out_shape, activation="none") -> LayerDesc:
    """Linear layer: last dim is the feature axis, leading dims are row counts."""
    in_shape = _as_dims(in_shape, "in_shape")
    out_shape = _as_dims(out_shape, "out_shape")
    rows_in = int(np.prod(in_shape[:-1])) if len(in_shape) > 1 else 1
    rows_out = int(np.prod(out_shape[:-1])) if len(out_shape) > 1 else 1
    if rows_in != rows_out:
        raise ValidationError(
            f"layer {index}: Linear row dims disagree: {in_shape} -> {out_shape}"
        )
    in_features, out_features = in_shape[-1], out_shape[-1]
    return LayerDesc(
        index=index,
        kind=KIND_LINEAR,
        in_shape=in_shape,
        out_shape=out_shape,
        activation=activation,
        macs=rows_in * in_features * out_features,
        weight_count=in_features * out_features,
        activation_count=int(np.prod(in_shape)),
    )


def make_conv2d(index, in_shape, kernel, out_channels=None, stride=1, pad=0,
                out_shape=None, activation="none") -> LayerDesc:
    """Conv2D layer over CHW tensors with zero padding."""
    in_shape = _as_dims(in_shape, "in_shape")
    if len(in_shape) != 3:
        raise ValidationError(f"layer {index}: Conv2D in_shape must be CHW")
    kernel = _as_pair(kernel, "kernel")
    stride = _as_pair(stride, "stride")
    pad = tuple(int(p) for p in (pad if not isinstance(pad, int) else (pad, pad)))
    if any(p < 0 for p in pad):
        raise ValidationError(f"layer {index}: negative padding")
    ic, h, w = in_shape
    kh, kw = kernel
    oh = (h + 2 * pad[0] - kh) // stride[0] + 1
    ow = (w + 2 * pad[1] - kw) // stride[1] + 1
    if oh <= 0 or ow <= 0:
        raise ValidationError(f"layer {index}: kernel does not fit input {in_shape}")
    if out_shape is not None:
        out_shape = _as_dims(out_shape, "out_shape")
        oc = out_shape[0]
        if out_shape != (oc, oh, ow):
            raise ValidationError(
                f"layer {index}: stated out_shape {out_shape} != computed {(oc, oh, ow)}"
            )
    else:
        if out_channels is None:
            raise ValidationError(f"layer {index}: Conv2D needs out_shape or out_channels")
        oc = int(out_channels)
        out_shape = (oc, oh, ow)
    return LayerDesc(
        index=index,
        kind=KIND_CONV2D,
        in_shape=in_shape,
        out_shape=out_shape,
        kernel=kernel,
        stride=stride,
        pad=pad,
        activation=activation,
        macs=oh * ow * oc * ic * kh * kw,
        weight_count=oc * ic * kh * kw,
        activation_count=ic * h * w,
    )


@dataclass(frozen=True)
class QuantScheme:
    """Per-layer (weight bits, activation bits) assignment."""

    pairs: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", tuple((int(w), int(a)) for w, a in self.pairs)
        )

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def validate(self, bitwidths, n_layers=None):
        if n_layers is not None and len(self.pairs) != n_layers:
            raise ValidationError(
                f"scheme has {len(self.pairs)} pairs, network has {n_layers} layers"
            )
        allowed = set(bitwidths)
        for i, (bw, ba) in enumerate(self.pairs):
            if bw not in allowed or ba not in allowed:
                raise ValidationError(
                    f"layer {i}: pair ({bw},{ba}) outside bitwidth set {sorted(allowed)}"
                )
        return self

    def to_json(self):
        return [[bw, ba] for bw, ba in self.pairs]

    @classmethod
    def from_json(cls, obj):
        return cls(tuple((int(p[0]), int(p[1])) for p in obj))


class WeightStore:
    """Per-layer float32 weight and bias tensors."""

    def __init__(self):
        self._weights = {}
        self._biases = {}

    def set_layer(self, index, weight, bias=None):
        self._weights[index] = np.asarray(weight, dtype=np.float32)
        if bias is not None:
            self.set_bias(index, bias)

    def set_bias(self, index, bias):
        self._biases[index] = np.asarray(bias, dtype=np.float32)

    def weight(self, index) -> np.ndarray:
        return self._weights[index]

    def bias(self, index) -> np.ndarray | None:
        return self._biases.get(index)

    def layers(self):
        return sorted(self._weights)


@dataclass
class NetworkIR:
    name: str
    layers: list
    weights: WeightStore | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)


def _expected_weight_shape(layer: LayerDesc):
    if layer.kind == KIND_LINEAR:
        return (layer.out_shape[-1], layer.in_shape[-1])
    ic = layer.in_shape[0]
    oc = layer.out_shape[0]
    return (oc, ic, layer.kernel[0], layer.kernel[1])


def _check_weights(net: NetworkIR):
    for layer in net.layers:
        w = net.weights.weight(layer.index)
        want = _expected_weight_shape(layer)
        if tuple(w.shape) != want:
            raise ValidationError(
                f"layer {layer.index}: weight shape {w.shape} != expected {want}"
            )
        b = net.weights.bias(layer.index)
        if b is not None and tuple(b.shape) != (layer.out_shape[0] if layer.kind == KIND_CONV2D else layer.out_shape[-1],):
            raise ValidationError(f"layer {layer.index}: bias shape mismatch")


def layer_from_json(index, obj) -> LayerDesc:
    kind = obj.get("kind")
    activation = obj.get("activation", "none")
    if activation not in ("none", "relu"):
        raise ValidationError(f"layer {index}: unknown activation {activation!r}")
    if kind == KIND_LINEAR:
        layer = make_linear(index, obj["in_shape"], obj["out_shape"], activation)
    elif kind == KIND_CONV2D:
        layer = make_conv2d(
            index,
            obj["in_shape"],
            obj.get("kernel", 1),
            stride=obj.get("stride", 1),
            pad=obj.get("pad", 0),
            out_shape=obj.get("out_shape"),
            activation=activation,
        )
    else:
        raise ValidationError(f"layer {index}: unsupported layer kind {kind!r}")
    if "macs" in obj and int(obj["macs"]) != layer.macs:
        raise ValidationError(
            f"layer {index}: stored macs {obj['macs']} != recomputed {layer.macs}"
        )
    return layer


def load_network(path) -> NetworkIR:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: malformed JSON ({e})") from None
    if not isinstance(spec.get("layers"), list) or not spec["layers"]:
        raise ValidationError(f"{path}: network needs a non-empty layers list")
    layers = [layer_from_json(i, obj) for i, obj in enumerate(spec["layers"])]
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_elements != int(np.prod(nxt.in_shape)):
            raise ValidationError(
                f"layers {prev.index}->{nxt.index}: {prev.out_shape} does not feed {nxt.in_shape}"
            )
    metadata = {k: v for k, v in spec.items() if k not in ("name", "layers", "weights_file")}
    net = NetworkIR(name=spec.get("name", path.stem), layers=layers, metadata=metadata)
    weights_file = spec.get("weights_file")
    if weights_file:
        wpath = path.parent / weights_file
        if wpath.exists():
            net.weights = load_weights(wpath, layers)
            _check_weights(net)
        else:
            raise ValidationError(f"{path}: weights_file {weights_file} not found")
    return net


def save_network(net: NetworkIR, path, weights_file=None) -> None:
    path = Path(path)
    layers = []
    for l in net.layers:
        obj = {
            "kind": l.kind,
            "in_shape": list(l.in_shape),
            "out_shape": list(l.out_shape),
            "macs": l.macs,
        }
        if l.kind == KIND_CONV2D:
            obj["kernel"] = list(l.kernel)
            obj["stride"] = list(l.stride)
            obj["pad"] = list(l.pad)
        if l.activation != "none":
            obj["activation"] = l.activation
        layers.append(obj)
    spec = {"name": net.name, "layers": layers}
    spec.update(net.metadata)
    if net.weights is not None:
        weights_file = weights_file or (path.stem + "_weights.bin")
        spec["weights_file"] = weights_file
        save_weights(net.weights, path.parent / weights_file)
    path.write_text(json.dumps(spec, indent=2) + "\n")


def save_weights(store: WeightStore, path) -> None:
    records = []
    for idx in store.layers():
        w = store.weight(idx)
        records.append(container.TensorRecord(idx, container.ROLE_WEIGHT, w.shape, w))
        b = store.bias(idx)
        if b is not None:
            records.append(container.TensorRecord(idx, container.ROLE_BIAS, b.shape, b))
    container.write_container(path, records)


def load_weights(path, layers=None) -> WeightStore:
    store = WeightStore()
    for rec in container.read_container(path):
        if rec.role == container.ROLE_WEIGHT:
            store.set_layer(rec.layer, rec.data)
        elif rec.role == container.ROLE_BIAS:
            store.set_bias(rec.layer, rec.data)
    return store


def scheme_uniform(network: NetworkIR, b: int, bitwidths=ALL_BITS) -> QuantScheme:
    """Scheme with every layer at (b, b)."""
    if network.n_layers == 0:
        raise ValidationError("empty network")
    if b not in bitwidths:
        raise ValidationError(f"bitwidth {b} not in configured set {sorted(bitwidths)}")
    return QuantScheme(tuple((b, b) for _ in range(network.n_layers)))
