"""Accuracy evaluators: a deterministic synthetic oracle for benchmarking the
search machinery, plus real PTQ / QAT evaluation of trained fixture networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .errors import ValidationError
from .inference import forward_int, quantize_network
from .model_ir import NetworkIR, QuantScheme
from .nn import FloatNet, sgd_train


# ---------------------------------------------------------------------------
# Synthetic oracle: monotone in every bitwidth, diminishing returns, an extra
# penalty cliff below 4 bits, and mild cross-layer interactions. First and
# last layers get boosted sensitivities, matching the usual behaviour of real
# networks.
# ---------------------------------------------------------------------------


def _g(b):
    return 1.0 - np.power(2.0, -np.asarray(b, dtype=np.float64))


@dataclass
class SyntheticOracle:
    n_layers: int
    b_max: int
    acc_max: float
    w_sens: np.ndarray
    a_sens: np.ndarray
    w_cliff: np.ndarray
    a_cliff: np.ndarray
    interactions: list  # (i, j, weight)
    seed: int

    @classmethod
    def build(cls, n_layers: int, seed: int = 2024, bitwidths=(1, 2, 4, 8),
              acc_max: float = 0.95) -> "SyntheticOracle":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
        w_sens = rng.uniform(0.01, 0.04, n_layers)
        a_sens = rng.uniform(0.01, 0.04, n_layers)
        for i in (0, n_layers - 1):
            w_sens[i] *= 3.0
            a_sens[i] *= 3.0
        w_cliff = rng.uniform(0.02, 0.08, n_layers)
        a_cliff = rng.uniform(0.02, 0.08, n_layers)
        interactions = []
        for _ in range(n_layers):
            i, j = rng.choice(n_layers, size=2, replace=False)
            interactions.append((int(i), int(j), float(rng.uniform(0.05, 0.2))))
        return cls(n_layers=n_layers, b_max=max(bitwidths), acc_max=acc_max,
                   w_sens=w_sens, a_sens=a_sens, w_cliff=w_cliff, a_cliff=a_cliff,
                   interactions=interactions, seed=seed)

    def batch_accuracy(self, flat: np.ndarray) -> np.ndarray:
        """Accuracy for schemes as a [N, 2L] raw-bit matrix."""
        flat = np.atleast_2d(np.asarray(flat, dtype=np.float64))
        if flat.shape[1] != 2 * self.n_layers:
            raise ValidationError("scheme width does not match oracle layer count")
        bw = flat[:, 0::2]
        ba = flat[:, 1::2]
        gtop = float(_g(self.b_max))
        cliff_w = np.maximum(0.0, _g(4) - _g(np.minimum(bw, 4)))
        cliff_a = np.maximum(0.0, _g(4) - _g(np.minimum(ba, 4)))
        pen = (
            self.w_sens * (gtop - _g(bw))
            + self.a_sens * (gtop - _g(ba))
            + self.w_cliff * cliff_w
            + self.a_cliff * cliff_a
        )
        total = pen.sum(axis=1)
        for i, j, v in self.interactions:
            total = total + v * pen[:, i] * pen[:, j]
        return np.clip(self.acc_max - total, 0.0, 1.0)

    def __call__(self, scheme: QuantScheme) -> float:
        return oracle_accuracy(self, scheme)


def oracle_accuracy(oracle: SyntheticOracle, scheme: QuantScheme) -> float:
    if len(scheme) != oracle.n_layers:
        raise ValidationError("scheme length does not match oracle")
    flat = np.array([b for pair in scheme for b in pair], dtype=np.float64)
    return float(oracle.batch_accuracy(flat[None, :])[0])


def enumerate_schemes(n_layers: int, bitwidths) -> np.ndarray:
    """All schemes as a [B^(2L), 2L] raw-bit matrix (use only for tiny L)."""
    bits = sorted(bitwidths)
    grids = np.meshgrid(*([np.array(bits)] * (2 * n_layers)), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.float64)


# ---------------------------------------------------------------------------
# Real evaluation on trained fixtures
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    name: str = "dataset"

    def save(self, path):
        tensors = [
            self.x_train.astype(np.float32),
            self.y_train.astype(np.float32),
            self.x_test.astype(np.float32),
            self.y_test.astype(np.float32),
        ]
        records = [
            container.TensorRecord(i, container.ROLE_DATASET, t.shape, t)
            for i, t in enumerate(tensors)
        ]
        container.write_container(path, records)

    @classmethod
    def load(cls, path, name="dataset"):
        recs = {r.layer: r.data for r in container.read_container(path)
                if r.role == container.ROLE_DATASET}
        if set(recs) != {0, 1, 2, 3}:
            raise ValidationError(f"{path}: dataset container needs tensors 0..3")
        return cls(
            x_train=recs[0].astype(np.float32),
            y_train=recs[1].astype(np.int64),
            x_test=recs[2].astype(np.float32),
            y_test=recs[3].astype(np.int64),
            name=name,
        )


def resolve_dataset(network: NetworkIR, search_dir=None) -> Dataset:
    name = network.metadata.get("dataset_file")
    if not name:
        raise ValidationError(f"network {network.name} metadata has no dataset_file")
    base = Path(search_dir) if search_dir else Path(".")
    path = base / name
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    return Dataset.load(path, name=network.metadata.get("dataset", "dataset"))


def _int_accuracy(qlayers, dataset: Dataset) -> float:
    logits = forward_int(qlayers, dataset.x_test)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == dataset.y_test))


def ptq_evaluate(network: NetworkIR, scheme: QuantScheme, dataset: Dataset) -> float:
    """Quantize trained weights directly and validate with integer inference."""
    qlayers = quantize_network(network, scheme)
    return _int_accuracy(qlayers, dataset)


def scheme_stream(seed: int, scheme: QuantScheme) -> np.random.Generator:
    """Per-evaluation RNG derived from (seed, scheme bits); stable across runs."""
    entropy = [seed] + [b for pair in scheme for b in pair]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def qat_retrain(network: NetworkIR, scheme: QuantScheme, dataset: Dataset,
                budget: str = "short", seed: int = 0,
                lr: float = 0.02, momentum: float = 0.9, batch_size: int = 64):
    """Clone and fine-tune with fake-quant; returns (FloatNet, loss history).

    Epochs: pretrain_epochs/20 (short) or /10 (final), rounded up to >= 1.
    The fine-tune learning rate is lower than the pre-training one: 2-bit STE
    training diverges at lr 0.05.
    """
    if budget not in ("short", "final"):
        raise ValidationError(f"unknown QAT budget {budget!r}")
    pretrain = int(network.metadata.get("pretrain_epochs", 20))
    div = 20 if budget == "short" else 10
    epochs = max(1, math.ceil(pretrain / div))
    net = FloatNet.from_ir(network)
    rng = scheme_stream(seed, scheme)
    history = sgd_train(net, dataset.x_train, dataset.y_train, epochs,
                        lr=lr, momentum=momentum, batch_size=batch_size,
                        rng=rng, scheme=list(scheme))
    return net, history


def qat_evaluate(network: NetworkIR, scheme: QuantScheme, dataset: Dataset,
                 budget: str = "short", seed: int = 0) -> float:
    """Short fake-quant fine-tune followed by integer PTQ-style validation."""
    for bw, ba in scheme:
        if bw not in (1, 2, 4, 8) or ba not in (1, 2, 4, 8):
            raise ValidationError("QAT schemes must use the 1/2/4/8 bitwidth set")
    net, _ = qat_retrain(network, scheme, dataset, budget=budget, seed=seed)
    tuned = net.to_ir(name=network.name, metadata=network.metadata)
    return ptq_evaluate(tuned, scheme, dataset)
