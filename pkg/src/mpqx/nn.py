"""Minimal float network (Linear/Conv2D + ReLU) with manual backprop.

Supports straight-through-estimator fake quantization of weights and layer
inputs for QAT fine-tuning. Kept deliberately small: SGD with momentum,
softmax cross-entropy, batch-first float64 tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .kernels import im2col_indices
from .model_ir import (
    KIND_CONV2D,
    KIND_LINEAR,
    LayerDesc,
    NetworkIR,
    WeightStore,
    make_conv2d,
    make_linear,
)
from .quant import fake_quant, fake_quant_rows


@dataclass
class _Grad:
    dw: np.ndarray
    db: np.ndarray


class _Layer:
    def __init__(self, desc: LayerDesc, w: np.ndarray, b: np.ndarray):
        self.desc = desc
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if desc.kind == KIND_CONV2D:
            self._idx = im2col_indices(desc)
            self._mask = self._idx >= 0
            self._safe = np.clip(self._idx, 0, None)

    # forward returns pre-activation z; caches live in `ctx`
    def forward(self, x, ctx, bits=None):
        if bits is not None:
            bw, ba = bits
            xq, xmask = fake_quant_rows(x, ba)  # per sample, like deployment
            wq, wmask = fake_quant(self.w, bw)
            ctx["xmask"], ctx["wmask"] = xmask, wmask
        else:
            xq, wq = x, self.w
        ctx["x"] = xq
        ctx["w"] = wq
        if self.desc.kind == KIND_LINEAR:
            return xq @ wq.T + self.b
        B = x.shape[0]
        flat = xq.reshape(B, -1)
        cols = np.where(self._mask, flat[:, self._safe], 0.0)
        ctx["cols"] = cols
        w2d = wq.reshape(wq.shape[0], -1)
        y = cols @ w2d.T + self.b  # [B, P, oc]
        oc, oh, ow = self.desc.out_shape
        return y.transpose(0, 2, 1).reshape(B, oc, oh, ow)

    def backward(self, dz, ctx):
        xq, wq = ctx["x"], ctx["w"]
        if self.desc.kind == KIND_LINEAR:
            dw = dz.T @ xq
            db = dz.sum(axis=0)
            dx = dz @ wq
        else:
            B = dz.shape[0]
            oc = self.desc.out_shape[0]
            dz2 = dz.reshape(B, oc, -1).transpose(0, 2, 1)  # [B, P, oc]
            cols = ctx["cols"]
            w2d = wq.reshape(oc, -1)
            dw = np.einsum("bpo,bpk->ok", dz2, cols).reshape(wq.shape)
            db = dz2.sum(axis=(0, 1))
            dcols = dz2 @ w2d  # [B, P, K]
            dx_flat = np.zeros((B, int(np.prod(self.desc.in_shape))))
            bidx = np.arange(B)[:, None, None]
            np.add.at(dx_flat, (bidx, np.broadcast_to(self._safe, dcols.shape)),
                      dcols * self._mask)
            dx = dx_flat.reshape((B,) + self.desc.in_shape)
        if "wmask" in ctx:
            dw = dw * ctx["wmask"]
            dx = dx * ctx["xmask"]
        return dx, _Grad(dw=dw, db=db)


class FloatNet:
    def __init__(self, layers: list[_Layer], name="net"):
        self.layers = layers
        self.name = name

    @classmethod
    def from_ir(cls, net: NetworkIR) -> "FloatNet":
        if net.weights is None:
            raise ValidationError(f"network {net.name} has no weights")
        layers = []
        for desc in net.layers:
            w = net.weights.weight(desc.index)
            b = net.weights.bias(desc.index)
            if b is None:
                b = np.zeros(w.shape[0])
            layers.append(_Layer(desc, w, b))
        return cls(layers, name=net.name)

    def to_ir(self, name=None, metadata=None) -> NetworkIR:
        store = WeightStore()
        descs = []
        for l in self.layers:
            store.set_layer(l.desc.index, l.w.astype(np.float32), l.b.astype(np.float32))
            descs.append(l.desc)
        return NetworkIR(name=name or self.name, layers=descs,
                         weights=store, metadata=dict(metadata or {}))

    def clone(self) -> "FloatNet":
        return FloatNet(
            [_Layer(l.desc, l.w.copy(), l.b.copy()) for l in self.layers], self.name
        )

    def forward(self, x, scheme=None, caches=None):
        """Logits for a batch; `scheme` enables fake-quant per layer."""
        h = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            ctx = {}
            bits = scheme[i] if scheme is not None else None
            h = h.reshape((h.shape[0],) + layer.desc.in_shape)
            z = layer.forward(h, ctx, bits=bits)
            if layer.desc.activation == "relu":
                ctx["z"] = z
                h = np.maximum(z, 0.0)
            else:
                h = z
            if caches is not None:
                caches.append(ctx)
        return h

    def loss_and_grads(self, x, y, scheme=None):
        """Mean softmax cross-entropy and parameter grads (STE under scheme)."""
        caches = []
        logits = self.forward(x, scheme=scheme, caches=caches)
        n = logits.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        grads = [None] * len(self.layers)
        dh = dlogits
        for i in reversed(range(len(self.layers))):
            layer, ctx = self.layers[i], caches[i]
            if layer.desc.activation == "relu":
                dh = dh.reshape(ctx["z"].shape) * (ctx["z"] > 0)
            dh = dh.reshape((dh.shape[0],) + layer.desc.out_shape)
            dh, grads[i] = layer.backward(dh, ctx)
        return loss, grads

    def accuracy(self, x, y) -> float:
        logits = self.forward(x)
        return float(np.mean(np.argmax(logits, axis=1) == y))


def sgd_train(net: FloatNet, x, y, epochs: int, lr=0.05, momentum=0.9,
              batch_size=64, rng=None, scheme=None):
    """In-place SGD training; returns the per-step loss history."""
    if epochs < 1:
        raise ValidationError("epochs must be >= 1")
    rng = rng or np.random.default_rng(0)
    n = len(y)
    vel = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers]
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = net.loss_and_grads(x[idx], y[idx], scheme=scheme)
            history.append(loss)
            for l, g, v in zip(net.layers, grads, vel):
                v[0][...] = momentum * v[0] - lr * g.dw
                v[1][...] = momentum * v[1] - lr * g.db
                l.w += v[0]
                l.b += v[1]
    return history


def build_mlp(in_features=16, hidden=32, classes=4, rng=None, name="tiny-mlp") -> FloatNet:
    rng = rng or np.random.default_rng(0)
    d0 = make_linear(0, (in_features,), (hidden,), activation="relu")
    d1 = make_linear(1, (hidden,), (classes,))
    scale0 = np.sqrt(2.0 / in_features)
    scale1 = np.sqrt(2.0 / hidden)
    return FloatNet(
        [
            _Layer(d0, rng.normal(0, scale0, (hidden, in_features)), np.zeros(hidden)),
            _Layer(d1, rng.normal(0, scale1, (classes, hidden)), np.zeros(classes)),
        ],
        name=name,
    )


def build_cnn(rng=None, name="tiny-cnn") -> FloatNet:
    """1x8x8 input -> conv(4,3x3) -> conv(8,3x3) -> linear(4 classes)."""
    rng = rng or np.random.default_rng(0)
    d0 = make_conv2d(0, (1, 8, 8), (3, 3), out_channels=4, activation="relu")
    d1 = make_conv2d(1, (4, 6, 6), (3, 3), out_channels=8, activation="relu")
    d2 = make_linear(2, (8 * 4 * 4,), (4,))
    layers = [
        _Layer(d0, rng.normal(0, np.sqrt(2.0 / 9), (4, 1, 3, 3)), np.zeros(4)),
        _Layer(d1, rng.normal(0, np.sqrt(2.0 / 36), (8, 4, 3, 3)), np.zeros(8)),
        _Layer(d2, rng.normal(0, np.sqrt(2.0 / 128), (4, 128)), np.zeros(4)),
    ]
    return FloatNet(layers, name=name)
