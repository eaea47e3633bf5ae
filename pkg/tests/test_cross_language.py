"""Cross-language differential tests: the native C runtime against the
in-process reference. Skipped entirely when no C compiler is on PATH, so the
pure-Python suite never needs a toolchain."""

import shutil
import struct
import subprocess
from pathlib import Path

import numpy as np
import pytest

from mpqx import codegen, fixtures
from mpqx.kernels import DOTP_OPS, conv2d, matmul
from mpqx.model_ir import QuantScheme, make_conv2d
from test_kernels import rand_values

pytestmark = pytest.mark.skipif(shutil.which("cc") is None,
                                reason="no C toolchain available")

REPO = Path(__file__).resolve().parent.parent
RUNTIME = REPO / "runtime"


@pytest.fixture(scope="session")
def build_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("native")
    subprocess.run(
        ["cc", "-O2", "-std=c11", "-Wall", f"-I{RUNTIME / 'include'}",
         str(RUNTIME / "tests" / "diff_runner.c"), str(RUNTIME / "src" / "mp_runtime.c"),
         "-lm", "-o", str(out / "diff_runner")],
        check=True,
    )
    return out


def _compile_model(gen_dir: Path) -> Path:
    exe = gen_dir / "main"
    subprocess.run(
        ["cc", "-O2", "-std=c11", f"-I{RUNTIME / 'include'}", f"-I{gen_dir}",
         str(gen_dir / "model.c"), str(gen_dir / "main.c"),
         str(RUNTIME / "src" / "mp_runtime.c"), "-lm", "-o", str(exe)],
        check=True,
    )
    return exe


def _make_cases(rng, n_matmul_per_combo=4, n_conv_per_combo=1):
    """Random kernel problems plus the expected results from the emulator."""
    blob = bytearray(b"MPDC")
    cases = []
    for bw, ba in sorted(DOTP_OPS):
        for _ in range(n_matmul_per_combo):
            m, k, n = (int(rng.integers(1, 8)), int(rng.integers(1, 40)),
                       int(rng.integers(1, 8)))
            a = rand_values(rng, ba, (m, k)).astype(np.int8)
            w = rand_values(rng, bw, (n, k)).astype(np.int8)
            expect, _ = matmul(a, w, bw, ba, "packed")
            cases.append(("matmul", bw, ba, a, w, expect.reshape(-1)))
        for _ in range(n_conv_per_combo):
            ic, oc = int(rng.integers(1, 3)), int(rng.integers(1, 4))
            size = int(rng.integers(4, 7))
            pad = 0 if ba == 1 else int(rng.integers(0, 2))
            layer = make_conv2d(0, (ic, size, size), (3, 3), out_channels=oc, pad=pad)
            x = rand_values(rng, ba, layer.in_shape).astype(np.int8)
            w = rand_values(rng, bw, (oc, ic, 3, 3)).astype(np.int8)
            expect, _ = conv2d(x, w, layer, bw, ba, "packed")
            cases.append(("conv", bw, ba, x, w, expect.reshape(-1), layer))
    blob += struct.pack("<I", len(cases))
    for case in cases:
        if case[0] == "matmul":
            _, bw, ba, a, w, _ = case
            m, k = a.shape
            n = w.shape[0]
            blob += struct.pack("<BBBB", 0, bw, ba, 0)
            blob += struct.pack("<III", m, n, k)
            blob += a.tobytes() + w.tobytes()
        else:
            _, bw, ba, x, w, _, layer = case
            ic, h, wd = layer.in_shape
            oc = layer.out_shape[0]
            blob += struct.pack("<BBBB", 1, bw, ba, 0)
            blob += struct.pack("<10I", ic, h, wd, oc, 3, 3,
                                layer.stride[0], layer.stride[1],
                                layer.pad[0], layer.pad[1])
            blob += x.tobytes() + w.tobytes()
    return bytes(blob), cases


def _run_cases(build_dir: Path, blob: bytes, cases, workdir: Path) -> int:
    case_file = workdir / "cases.bin"
    out_file = workdir / "out.bin"
    case_file.write_bytes(blob)
    subprocess.run([str(build_dir / "diff_runner"), str(case_file), str(out_file)],
                   check=True)
    raw = out_file.read_bytes()
    off = 0
    for i, case in enumerate(cases):
        expect = case[5]
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        got = np.frombuffer(raw, dtype="<i4", count=count, offset=off)
        off += 4 * count
        assert count == expect.size, f"case {i}: size mismatch"
        np.testing.assert_array_equal(got, expect, err_msg=f"case {i} ({case[0]})")
    assert off == len(raw)
    return len(cases)


def _e2e_inputs(gen_dir, exe, plan, xs):
    """Run the compiled binary on each input; compare to the reference."""
    n_ok = 0
    for i, x in enumerate(xs):
        codegen.write_input_tensor(x, gen_dir / "input.bin")
        ref = codegen.reference_logits(plan, gen_dir / "weights.bin", x)[0]
        r = subprocess.run([str(exe), str(gen_dir / "weights.bin"),
                            str(gen_dir / "input.bin")],
                           capture_output=True, text=True, check=True)
        got = np.array([int(v) for v in r.stdout.split()], dtype=np.int64)
        np.testing.assert_array_equal(got, ref, err_msg=f"input {i}")
        n_ok += 1
    return n_ok


def test_runtime_unit_suite(build_dir, tmp_path):
    subprocess.run(["make", "-C", str(RUNTIME), "test"], check=True,
                   capture_output=True)


def test_differential_kernels_500_cases(build_dir, tmp_path):
    rng = np.random.default_rng(1101)
    blob, cases = _make_cases(rng, n_matmul_per_combo=40, n_conv_per_combo=10)
    assert len(cases) == 500
    _run_cases(build_dir, blob, cases, tmp_path)


@pytest.mark.parametrize("kind,schemes", [
    ("mlp", [((4, 8), (8, 2)), ((8, 8), (8, 8)), ((1, 2), (2, 1))]),
    ("cnn", [((8, 8), (4, 4), (2, 2)), ((4, 2), (1, 1), (8, 4)),
             ((5, 6), (7, 8), (4, 8))]),
])
def test_generated_model_logits(build_dir, tmp_path, kind, schemes):
    network, data = fixtures.get_fixture(kind)
    for pairs in schemes:
        plan = codegen.build_plan(network, QuantScheme(pairs))
        gen = tmp_path / f"{kind}-{'-'.join(str(b) for p in pairs for b in p)}"
        codegen.emit_source(plan, gen)
        exe = _compile_model(gen)
        _e2e_inputs(gen, exe, plan, data.x_test[:6])


def test_generated_matrix_linear_model(build_dir, tmp_path):
    # Linear layers with leading row dims exercise rows > 1 in the runtime
    from mpqx.model_ir import NetworkIR, WeightStore, make_linear

    rng = np.random.default_rng(11)
    store = WeightStore()
    store.set_layer(0, rng.normal(size=(5, 4)).astype(np.float32),
                    rng.normal(size=5).astype(np.float32))
    store.set_layer(1, rng.normal(size=(3, 15)).astype(np.float32),
                    rng.normal(size=3).astype(np.float32))
    net = NetworkIR("mrows", [make_linear(0, (3, 4), (3, 5), activation="relu"),
                              make_linear(1, (15,), (3,))], weights=store)
    plan = codegen.build_plan(net, QuantScheme(((8, 4), (4, 8))))
    gen = tmp_path / "mrows"
    codegen.emit_source(plan, gen)
    exe = _compile_model(gen)
    xs = [rng.normal(size=(3, 4)).astype(np.float32) for _ in range(8)]
    _e2e_inputs(gen, exe, plan, xs)


def run_cross_language_acceptance():
    """Full criterion-11 workload; called from the acceptance suite."""
    import tempfile

    work = Path(tempfile.mkdtemp(prefix="mpqx-native-"))
    subprocess.run(
        ["cc", "-O2", "-std=c11", f"-I{RUNTIME / 'include'}",
         str(RUNTIME / "tests" / "diff_runner.c"), str(RUNTIME / "src" / "mp_runtime.c"),
         "-lm", "-o", str(work / "diff_runner")],
        check=True,
    )
    rng = np.random.default_rng(1102)
    blob, cases = _make_cases(rng, n_matmul_per_combo=40, n_conv_per_combo=10)
    n_cases = _run_cases(work, blob, cases, work)

    n_inputs = 0
    for kind, pairs in (("mlp", ((4, 8), (8, 2))), ("cnn", ((4, 2), (1, 1), (8, 4)))):
        network, data = fixtures.get_fixture(kind)
        plan = codegen.build_plan(network, QuantScheme(pairs))
        gen = work / f"gen-{kind}"
        codegen.emit_source(plan, gen)
        exe = _compile_model(gen)
        n_inputs += _e2e_inputs(gen, exe, plan, data.x_test[:50])
    return n_cases, n_inputs
