import json

import numpy as np
import pytest

from mpqx import codegen
from mpqx.errors import ValidationError
from mpqx.inference import forward_int, quantize_network
from mpqx.model_ir import QuantScheme


class TestBuildPlan:
    def test_mlp_two_calls_pingpong(self, mlp_fixture):
        net, _ = mlp_fixture
        plan = codegen.build_plan(net, QuantScheme(((8, 8), (8, 8))))
        assert len(plan.calls) == 2
        assert plan.calls[0].buffers["act_out"] == plan.calls[1].buffers["act_in"]
        assert plan.calls[0].buffers["act_in"] != plan.calls[0].buffers["act_out"]
        assert "act_out" not in plan.calls[1].buffers  # last layer emits logits

    def test_arena_holds_simultaneous_buffers(self, cnn_fixture):
        net, _ = cnn_fixture
        plan = codegen.build_plan(net, QuantScheme(((8, 8), (4, 4), (2, 2))))
        for step in range(6 * len(plan.calls)):
            live = [b for b in plan.buffers.values() if b.start <= step <= b.end]
            total = sum(b.size for b in live)
            assert total <= plan.arena_bytes
            # live buffers never overlap in the arena
            live.sort(key=lambda b: b.offset)
            for a, b in zip(live, live[1:]):
                assert a.offset + a.size <= b.offset

    def test_widening_note_for_ptq_widths(self, mlp_fixture):
        net, _ = mlp_fixture
        plan = codegen.build_plan(net, QuantScheme(((5, 6), (8, 8))))
        assert plan.calls[0].widened
        assert plan.calls[0].eff_bw == 8 and plan.calls[0].eff_ba == 8
        assert plan.calls[0].bw == 5 and plan.calls[0].ba == 6
        assert not plan.calls[1].widened

    def test_scheme_length_checked(self, mlp_fixture):
        net, _ = mlp_fixture
        with pytest.raises(ValidationError):
            codegen.build_plan(net, QuantScheme(((8, 8),)))

    def test_empty_plan_rejected(self, mlp_fixture, tmp_path):
        net, _ = mlp_fixture
        plan = codegen.build_plan(net, QuantScheme(((8, 8), (8, 8))))
        plan.calls = []
        with pytest.raises(ValidationError, match="empty"):
            codegen.emit_source(plan, tmp_path)


class TestEmission:
    def test_deterministic_regeneration(self, mlp_fixture, tmp_path):
        net, _ = mlp_fixture
        scheme = QuantScheme(((4, 8), (8, 4)))
        a, b = tmp_path / "a", tmp_path / "b"
        m1 = codegen.emit_source(codegen.build_plan(net, scheme), a)
        m2 = codegen.emit_source(codegen.build_plan(net, scheme), b)
        assert m1["files"] == m2["files"]
        for f in m1["files"]:
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_manifest_lists_all_files(self, mlp_fixture, tmp_path):
        net, _ = mlp_fixture
        manifest = codegen.emit_source(
            codegen.build_plan(net, QuantScheme(((2, 2), (4, 4)))), tmp_path
        )
        for f in manifest["files"]:
            assert (tmp_path / f).exists()
        plan_obj = json.loads((tmp_path / "plan.json").read_text())
        assert plan_obj["arena_bytes"] == manifest["arena_bytes"]

    def test_reference_matches_inprocess_kernels(self, mlp_fixture, tmp_path):
        # the exported-container executor and the direct in-process pipeline
        # agree exactly when given identical float32 scales
        net, data = mlp_fixture
        scheme = QuantScheme(((8, 8), (8, 8)))
        plan = codegen.build_plan(net, scheme)
        codegen.emit_source(plan, tmp_path)
        x = data.x_test[:32]
        ref = codegen.reference_logits(plan, tmp_path / "weights.bin", x)
        qlayers = quantize_network(net, scheme)
        # float64 scales round-trip through float32 storage
        for ql in qlayers:
            ql.s_w = float(np.float32(ql.s_w))
            if ql.s_b is not None:
                ql.s_b = float(np.float32(ql.s_b))
        direct = forward_int(qlayers, x)
        np.testing.assert_array_equal(ref, direct)

    def test_weights_container_roundtrip(self, cnn_fixture, tmp_path):
        from mpqx import container
        from mpqx.inference import packable_width, qlayers_from_container

        net, _ = cnn_fixture
        scheme = QuantScheme(((4, 2), (8, 4), (2, 8)))
        plan = codegen.build_plan(net, scheme)
        codegen.emit_source(plan, tmp_path)
        eff = QuantScheme(tuple((packable_width(w), packable_width(a)) for w, a in scheme))
        qlayers = qlayers_from_container(net, tmp_path / "weights.bin", eff)
        ref = quantize_network(net, scheme)
        for got, want in zip(qlayers, ref):
            np.testing.assert_array_equal(got.w_int, want.w_int)
            np.testing.assert_array_equal(got.b_int, want.b_int)
            assert got.s_w == pytest.approx(want.s_w, rel=1e-6)

    def test_input_tensor_file(self, tmp_path, rng):
        x = rng.normal(size=(1, 8, 8)).astype(np.float32)
        codegen.write_input_tensor(x, tmp_path / "in.bin")
        from mpqx import container

        recs = container.read_container(tmp_path / "in.bin")
        assert recs[0].role == container.ROLE_INPUT
        np.testing.assert_array_equal(recs[0].data, x)
