"""Command line surface: profile -> fit -> explore -> codegen -> report,
plus a fixture generator for the bundled desk-scale networks.

Exit codes: 0 ok, 1 usage, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from .errors import EvaluationAborted, MpqxError, ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _default_seed() -> int:
    return int(os.environ.get("MPQX_SEED", "0"))


def _manifest(command: str, args: dict, inputs, outputs) -> dict:
    cfg = json.dumps(args, sort_keys=True, default=str)
    return {
        "command": command,
        "config_hash": hashlib.sha256(cfg.encode()).hexdigest()[:16],
        "seed": args.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
    }


def _write_sidecar(primary_output, manifest: dict):
    side = dict(manifest)
    side["created_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    Path(str(primary_output) + ".manifest.json").write_text(
        json.dumps(side, indent=2) + "\n"
    )


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_profile(args) -> int:
    from . import hwsim, proxy

    hw = hwsim.load_hw_config(args.hw)
    plan = hwsim.load_plan(args.plan)
    profile = hwsim.run_kernel_benchmarks(hw, plan)
    obj = profile.to_json()
    obj["manifest"] = _manifest("profile", vars(args), [args.hw, args.plan or "default"], [args.out])
    _write_json(args.out, obj)
    _write_sidecar(args.out, obj["manifest"])
    print(f"wrote {args.out} ({len(profile.records)} records)")
    return EXIT_OK


def cmd_fit(args) -> int:
    from . import proxy

    profile = proxy.load_profile(args.profile)
    model = proxy.fit_proxy(profile, args.kind)
    proxy.save_proxy(model, args.out)
    manifest = _manifest("fit", vars(args), [args.profile], [args.out])
    obj = json.loads(Path(args.out).read_text())
    obj["manifest"] = manifest
    _write_json(args.out, obj)
    _write_sidecar(args.out, manifest)
    for kernel, rep in model.fit_report.items():
        print(f"{kernel}: holdout R2={rep['r2']:.4f} RMSE={rep['rmse']:.1f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _build_cost(spec: str, network):
    from . import proxy

    if spec == "bops":
        return proxy.BopsCost(network)
    model = proxy.load_proxy(spec)
    return proxy.ProxyCost(model, network)


def cmd_explore(args) -> int:
    from . import evaluate, explorer, model_ir
    from .sampler import SamplerConfig
    from .surrogate import ForestConfig

    network = model_ir.load_network(args.network)
    bits = tuple(int(b) for b in args.bits.split(","))
    cost = _build_cost(args.proxy, network)
    sampler_cfg = SamplerConfig(
        n_init=args.n_init,
        bitwidths=bits,
        protect_ends=not args.no_protect_ends,
        seed=args.seed,
    )
    cfg = explorer.SearchConfig(
        mode=args.mode,
        bitwidths=bits,
        constraint_ratio=args.constraint_ratio,
        budget=args.budget,
        seed=args.seed,
        sampler=sampler_cfg,
        forest=ForestConfig(n_trees=args.trees, seed=args.seed),
    )
    if args.mode == "oracle":
        oracle = evaluate.SyntheticOracle.build(network.n_layers, seed=args.oracle_seed,
                                                bitwidths=bits)
        evaluator = oracle
    else:
        dataset = evaluate.resolve_dataset(network, Path(args.network).parent)
        if args.mode == "ptq":
            evaluator = lambda s: evaluate.ptq_evaluate(network, s, dataset)
        else:
            evaluator = lambda s: evaluate.qat_evaluate(network, s, dataset, seed=args.seed)

    try:
        best, state = explorer.explore(network, cfg, evaluator, cost)
    except EvaluationAborted as e:
        if e.state is not None:  # persist partial progress before failing
            partial = explorer.state_to_result_json(
                network, cfg, e.state, cost.name, 0.0, {"aborted": str(e)})
            _write_json(args.out, partial)
        raise
    extra = {}
    if args.mode == "qat":
        extra["final_retrain_accuracy"] = evaluate.qat_evaluate(
            network, best, dataset, budget="final", seed=args.seed
        )
    base = cost.total(model_ir.scheme_uniform(network, 8, bits + (8,)))
    obj = explorer.state_to_result_json(network, cfg, state, cost.name, base, extra)
    obj["manifest"] = _manifest("explore", vars(args), [args.network, args.proxy], [args.out])
    _write_json(args.out, obj)
    _write_sidecar(args.out, obj["manifest"])
    print(f"best accuracy {state.best.accuracy:.4f} at cost {state.best.cost:.6g} "
          f"(constraint {state.constraint:.6g})")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_codegen(args) -> int:
    from . import codegen, model_ir

    result = json.loads(Path(args.result).read_text())
    if not result.get("best"):
        raise ValidationError(f"{args.result} has no best scheme")
    network = model_ir.load_network(args.network)
    scheme = model_ir.QuantScheme.from_json(result["best"]["scheme"])
    plan = codegen.build_plan(network, scheme)
    manifest = codegen.emit_source(plan, args.out)
    manifest["manifest"] = _manifest("codegen", vars(args), [args.result, args.network],
                                     [str(Path(args.out) / f) for f in manifest["files"]])
    _write_json(Path(args.out) / "codegen_manifest.json", manifest)
    _write_sidecar(Path(args.out) / "codegen_manifest.json", manifest["manifest"])
    print(f"emitted {len(manifest['files'])} files to {args.out} "
          f"(arena {manifest['arena_bytes']} bytes)")
    return EXIT_OK


def cmd_report(args) -> int:
    from . import report

    info = report.write_report(args.runs, args.out)
    manifest = _manifest("report", vars(args), [args.runs], [info["summary_csv"]])
    _write_sidecar(info["summary_csv"], manifest)
    print(f"{info['n_runs']} runs -> {info['summary_csv']}")
    for fig in info["figures"]:
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_fixture(args) -> int:
    from . import fixtures

    info = fixtures.write_fixture(args.kind, args.out)
    print(json.dumps(info, indent=2))
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="mpqx", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("profile", help="run kernel benchmarks on a simulated target")
    sp.add_argument("--hw", required=True, help="config JSON or builtin name (tiny/small/high/systolic)")
    sp.add_argument("--plan", default=None, help="benchmark plan JSON (default: bundled plan)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("fit", help="fit a latency proxy from a profile")
    sp.add_argument("--profile", required=True)
    sp.add_argument("--kind", choices=["linear", "tree", "bops", "linear-bops"], default="linear")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("explore", help="search for the best scheme under a cost constraint")
    sp.add_argument("--network", required=True)
    sp.add_argument("--mode", choices=["ptq", "qat", "oracle"], default="oracle")
    sp.add_argument("--bits", default="1,2,4,8", help="comma-separated bitwidth set")
    sp.add_argument("--constraint-ratio", type=float, default=0.6,
                    help="fraction of the uniform-8-bit cost")
    sp.add_argument("--proxy", default="bops", help="'bops' or a fitted proxy JSON")
    sp.add_argument("--budget", type=int, default=48)
    sp.add_argument("--n-init", type=int, default=16)
    sp.add_argument("--trees", type=int, default=100)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.add_argument("--oracle-seed", type=int, default=2024)
    sp.add_argument("--no-protect-ends", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_explore)

    sp = sub.add_parser("codegen", help="emit C source + weights for a search result")
    sp.add_argument("--result", required=True)
    sp.add_argument("--network", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.set_defaults(func=cmd_codegen)

    sp = sub.add_parser("report", help="summarize result JSONs into CSV + figures")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("fixture", help="write a bundled fixture network to disk")
    sp.add_argument("--kind", choices=["mlp", "cnn"], required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.set_defaults(func=cmd_fixture)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except MpqxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
