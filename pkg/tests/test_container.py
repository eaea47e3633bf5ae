import numpy as np
import pytest

from mpqx import container
from mpqx.errors import ValidationError


def test_roundtrip_all_roles(tmp_path, rng):
    w = rng.normal(size=(4, 6)).astype(np.float32)
    b = rng.integers(-1000, 1000, size=4).astype(np.int32)
    words = rng.integers(0, 1 << 32, size=(4, 2), dtype=np.uint64).astype(np.uint32)
    records = [
        container.TensorRecord(0, container.ROLE_WEIGHT, w.shape, w),
        container.TensorRecord(0, container.ROLE_QBIAS, b.shape, b, bits=32, scale=0.25),
        container.TensorRecord(1, container.ROLE_QWEIGHT, (4, 6), words, bits=8, scale=0.5),
        container.TensorRecord(0, container.ROLE_INPUT, (3,), np.arange(3, dtype=np.float32)),
    ]
    path = tmp_path / "t.bin"
    container.write_container(path, records)
    back = container.read_container(path)
    assert len(back) == 4
    np.testing.assert_array_equal(back[0].data, w)
    np.testing.assert_array_equal(back[1].data, b)
    assert back[1].bits == 32 and back[1].scale == pytest.approx(0.25)
    np.testing.assert_array_equal(back[2].data, words)
    assert container.find(back, 1, container.ROLE_QWEIGHT).scale == pytest.approx(0.5)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValidationError, match="magic"):
        container.read_container(p)


def test_truncated(tmp_path, rng):
    w = rng.normal(size=(4, 6)).astype(np.float32)
    path = tmp_path / "t.bin"
    container.write_container(path, [
        container.TensorRecord(0, container.ROLE_WEIGHT, w.shape, w)
    ])
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(ValidationError, match="truncated"):
        container.read_container(path)


def test_trailing_bytes(tmp_path, rng):
    w = rng.normal(size=(2, 2)).astype(np.float32)
    path = tmp_path / "t.bin"
    container.write_container(path, [
        container.TensorRecord(0, container.ROLE_WEIGHT, w.shape, w)
    ])
    path.write_bytes(path.read_bytes() + b"\xff")
    with pytest.raises(ValidationError, match="trailing"):
        container.read_container(path)


def test_quant_roles_need_bits_and_scale(tmp_path):
    rec = container.TensorRecord(0, container.ROLE_QBIAS, (2,),
                                 np.zeros(2, dtype=np.int32))
    with pytest.raises(ValidationError, match="bits and scale"):
        container.write_container(tmp_path / "x.bin", [rec])


def test_payload_size_validated(tmp_path):
    rec = container.TensorRecord(0, container.ROLE_WEIGHT, (4,),
                                 np.zeros(3, dtype=np.float32))
    with pytest.raises(ValidationError, match="payload"):
        container.write_container(tmp_path / "x.bin", [rec])


def test_find_missing(tmp_path, rng):
    w = rng.normal(size=(2, 2)).astype(np.float32)
    path = tmp_path / "t.bin"
    container.write_container(path, [
        container.TensorRecord(0, container.ROLE_WEIGHT, w.shape, w)
    ])
    recs = container.read_container(path)
    with pytest.raises(ValidationError, match="no tensor"):
        container.find(recs, 3, container.ROLE_QWEIGHT)
