"""Bundled desk-scale fixtures: synthetic datasets and pre-trained networks.

Everything is generated deterministically from fixed seeds at first use and
cached in-process; nothing is downloaded. The CLI `fixture` command writes
the same artifacts to disk for pipeline runs.
"""

from __future__ import annotations

import functools
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .evaluate import Dataset
from .model_ir import NetworkIR, save_network
from .nn import build_cnn, build_mlp, sgd_train

MLP_PRETRAIN_EPOCHS = 40
CNN_PRETRAIN_EPOCHS = 30


@functools.lru_cache(maxsize=None)
def cluster_dataset(seed: int = 11) -> Dataset:
    """4 Gaussian clusters in R^16, moderately overlapping."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    n_train, n_test, classes, dim = 2000, 500, 4, 16
    means = rng.normal(0.0, 1.0, (classes, dim))
    means = means / np.linalg.norm(means, axis=1, keepdims=True) * 3.2

    def draw(n):
        y = rng.integers(0, classes, size=n)
        x = means[y] + rng.normal(0.0, 1.0, (n, dim))
        return x.astype(np.float32), y.astype(np.int64)

    x_tr, y_tr = draw(n_train)
    x_te, y_te = draw(n_test)
    return Dataset(x_tr, y_tr, x_te, y_te, name="clusters16")


@functools.lru_cache(maxsize=None)
def bars_dataset(seed: int = 12) -> Dataset:
    """4-class 1x8x8 images: horizontal / vertical / two diagonal bar motifs
    at jittered positions, plus Gaussian noise."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 102]))
    n_train, n_test = 1600, 400

    def draw(n):
        y = rng.integers(0, 4, size=n)
        x = rng.normal(0.0, 0.35, (n, 1, 8, 8)).astype(np.float64)
        pos = rng.integers(1, 7, size=n)
        for i in range(n):
            p = pos[i]
            if y[i] == 0:
                x[i, 0, p, :] += 1.6
            elif y[i] == 1:
                x[i, 0, :, p] += 1.6
            elif y[i] == 2:
                for k in range(8):
                    x[i, 0, k, k] += 1.6
            else:
                for k in range(8):
                    x[i, 0, k, 7 - k] += 1.6
        return x.astype(np.float32), y.astype(np.int64)

    x_tr, y_tr = draw(n_train)
    x_te, y_te = draw(n_test)
    return Dataset(x_tr, y_tr, x_te, y_te, name="bars8x8")


def _metadata(dataset: Dataset, epochs: int, acc: float):
    return {
        "dataset": dataset.name,
        "dataset_file": "dataset.bin",
        "pretrain_epochs": epochs,
        "float_accuracy": round(acc, 4),
    }


@functools.lru_cache(maxsize=None)
def mlp_fixture():
    """Pre-trained 16 -> 32 -> 4 MLP; returns (NetworkIR, Dataset)."""
    data = cluster_dataset()
    net = build_mlp(rng=np.random.default_rng(np.random.SeedSequence([5, 1])))
    sgd_train(net, data.x_train, data.y_train, MLP_PRETRAIN_EPOCHS,
              rng=np.random.default_rng(np.random.SeedSequence([5, 2])))
    acc = net.accuracy(data.x_test, data.y_test)
    if acc < 0.9:
        raise ValidationError(f"MLP fixture failed to train: accuracy {acc:.3f} < 0.9")
    return net.to_ir(metadata=_metadata(data, MLP_PRETRAIN_EPOCHS, acc)), data


@functools.lru_cache(maxsize=None)
def cnn_fixture():
    """Pre-trained conv-conv-linear net on the bar images."""
    data = bars_dataset()
    net = build_cnn(rng=np.random.default_rng(np.random.SeedSequence([6, 1])))
    sgd_train(net, data.x_train, data.y_train, CNN_PRETRAIN_EPOCHS, lr=0.03,
              rng=np.random.default_rng(np.random.SeedSequence([6, 2])))
    acc = net.accuracy(data.x_test, data.y_test)
    if acc < 0.9:
        raise ValidationError(f"CNN fixture failed to train: accuracy {acc:.3f} < 0.9")
    return net.to_ir(metadata=_metadata(data, CNN_PRETRAIN_EPOCHS, acc)), data


def get_fixture(kind: str):
    if kind == "mlp":
        return mlp_fixture()
    if kind == "cnn":
        return cnn_fixture()
    raise ValidationError(f"unknown fixture kind {kind!r} (want mlp or cnn)")


def write_fixture(kind: str, out_dir) -> dict:
    """Materialize a fixture as network.json + weights + dataset files."""
    network, data = get_fixture(kind)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net_path = out / f"{network.name}.json"
    save_network(network, net_path, weights_file=f"{network.name}_weights.bin")
    data.save(out / "dataset.bin")
    return {
        "network": str(net_path),
        "weights": str(out / f"{network.name}_weights.bin"),
        "dataset": str(out / "dataset.bin"),
        "float_accuracy": network.metadata["float_accuracy"],
    }
