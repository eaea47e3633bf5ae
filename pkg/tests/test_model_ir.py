import json

import numpy as np
import pytest

from mpqx.errors import ValidationError
from mpqx.model_ir import (
    NetworkIR,
    QuantScheme,
    WeightStore,
    load_network,
    make_conv2d,
    make_linear,
    save_network,
    scheme_uniform,
)


def test_linear_macs():
    layer = make_linear(0, (10,), (20,))
    assert layer.macs == 200
    assert layer.weight_count == 200
    assert layer.activation_count == 10


def test_conv_macs():
    # in 1x8x8, 4 filters 3x3, stride 1, no pad -> out 4x6x6
    layer = make_conv2d(0, (1, 8, 8), (3, 3), out_channels=4)
    assert layer.out_shape == (4, 6, 6)
    assert layer.macs == 6 * 6 * 4 * 1 * 3 * 3 == 1296
    assert layer.weight_count == 36
    assert layer.activation_count == 64


def test_conv_stride_pad():
    layer = make_conv2d(0, (3, 9, 9), (3, 3), out_channels=5, stride=2, pad=1)
    # oh = (9 + 2 - 3)//2 + 1 = 5
    assert layer.out_shape == (5, 5, 5)
    assert layer.macs == 5 * 5 * 5 * 3 * 9


def test_lenet5_style_layer_count(tmp_path):
    spec = {
        "name": "lenet5ish",
        "layers": [
            {"kind": "Conv2D", "in_shape": [1, 28, 28], "kernel": [5, 5],
             "out_shape": [6, 24, 24], "activation": "relu"},
            {"kind": "Conv2D", "in_shape": [6, 24, 24], "kernel": [5, 5],
             "out_shape": [16, 20, 20], "activation": "relu"},
            {"kind": "Linear", "in_shape": [6400], "out_shape": [120]},
            {"kind": "Linear", "in_shape": [120], "out_shape": [84]},
            {"kind": "Linear", "in_shape": [84], "out_shape": [10]},
        ],
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(spec))
    net = load_network(p)
    assert net.n_layers == 5
    kinds = [l.kind for l in net.layers]
    assert kinds.count("Conv2D") == 2 and kinds.count("Linear") == 3


def test_macs_crosscheck_rejects_bad_value(tmp_path):
    spec = {
        "name": "bad",
        "layers": [{"kind": "Linear", "in_shape": [10], "out_shape": [20], "macs": 123}],
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(spec))
    with pytest.raises(ValidationError, match="macs"):
        load_network(p)


def test_load_rejects_malformed_json(tmp_path):
    p = tmp_path / "net.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError, match="JSON"):
        load_network(p)


def test_load_rejects_unknown_kind(tmp_path):
    p = tmp_path / "net.json"
    p.write_text(json.dumps({"layers": [{"kind": "Attention", "in_shape": [4], "out_shape": [4]}]}))
    with pytest.raises(ValidationError, match="unsupported layer kind"):
        load_network(p)


def test_load_rejects_shape_mismatch(tmp_path):
    spec = {
        "layers": [
            {"kind": "Linear", "in_shape": [10], "out_shape": [20]},
            {"kind": "Linear", "in_shape": [21], "out_shape": [4]},
        ]
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(spec))
    with pytest.raises(ValidationError, match="does not feed"):
        load_network(p)


def test_roundtrip_with_weights(tmp_path, rng):
    store = WeightStore()
    store.set_layer(0, rng.normal(size=(20, 10)).astype(np.float32),
                    rng.normal(size=20).astype(np.float32))
    store.set_layer(1, rng.normal(size=(4, 20)).astype(np.float32),
                    rng.normal(size=4).astype(np.float32))
    net = NetworkIR(
        "rt",
        [make_linear(0, (10,), (20,), activation="relu"), make_linear(1, (20,), (4,))],
        weights=store,
        metadata={"float_accuracy": 0.9},
    )
    path = tmp_path / "rt.json"
    save_network(net, path)
    loaded = load_network(path)
    assert loaded.name == "rt"
    assert [l.kind for l in loaded.layers] == [l.kind for l in net.layers]
    assert [l.macs for l in loaded.layers] == [l.macs for l in net.layers]
    assert loaded.layers[0].activation == "relu"
    assert loaded.metadata["float_accuracy"] == 0.9
    for i in (0, 1):
        np.testing.assert_array_equal(loaded.weights.weight(i), store.weight(i))
        np.testing.assert_array_equal(loaded.weights.bias(i), store.bias(i))


def test_scheme_uniform():
    net = NetworkIR("u", [make_linear(i, (4,), (4,)) for i in range(5)])
    s8 = scheme_uniform(net, 8)
    assert s8.pairs == ((8, 8),) * 5
    s1 = scheme_uniform(net, 1)
    assert s1.pairs == ((1, 1),) * 5
    with pytest.raises(ValidationError):
        scheme_uniform(net, 3)
    with pytest.raises(ValidationError, match="empty network"):
        scheme_uniform(NetworkIR("e", []), 8)


def test_scheme_validate():
    s = QuantScheme(((8, 4), (2, 1)))
    s.validate((1, 2, 4, 8), 2)
    with pytest.raises(ValidationError):
        s.validate((4, 5, 6, 7, 8), 2)
    with pytest.raises(ValidationError):
        s.validate((1, 2, 4, 8), 3)
    assert QuantScheme.from_json(s.to_json()) == s
