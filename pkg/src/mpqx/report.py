"""Run reporting: summary CSV, trace CSV, and matplotlib figures rendered to
files next to the delimited output."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

SUMMARY_FIELDS = [
    "run", "network", "mode", "cost_model", "bitwidths", "budget", "seed",
    "constraint_ratio", "constraint", "base_cost", "best_accuracy", "best_cost",
    "n_samples", "n_feasible",
]


def load_results(runs_dir) -> list[tuple[str, dict]]:
    runs = []
    for path in sorted(Path(runs_dir).glob("*.json")):
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if "trace" in obj and "samples" in obj:
            runs.append((path.stem, obj))
    return runs


def write_report(runs_dir, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = load_results(runs_dir)

    summary_path = out / "report.csv"
    with open(summary_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for name, obj in runs:
            best = obj.get("best") or {}
            samples = obj.get("samples", [])
            w.writerow({
                "run": name,
                "network": obj.get("network", ""),
                "mode": obj.get("mode", ""),
                "cost_model": obj.get("cost_model", ""),
                "bitwidths": "/".join(str(b) for b in obj.get("bitwidths", [])),
                "budget": obj.get("budget", ""),
                "seed": obj.get("seed", ""),
                "constraint_ratio": obj.get("constraint_ratio", ""),
                "constraint": obj.get("constraint", ""),
                "base_cost": obj.get("base_cost", ""),
                "best_accuracy": best.get("accuracy", ""),
                "best_cost": best.get("cost", ""),
                "n_samples": len(samples),
                "n_feasible": sum(1 for s in samples if s.get("feasible")),
            })

    traces_path = out / "traces.csv"
    with open(traces_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "iteration", "best_accuracy"])
        for name, obj in runs:
            for i, v in enumerate(obj.get("trace", [])):
                w.writerow([name, i, "" if v is None else v])

    figures = []
    if runs:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for name, obj in runs:
            trace = [v for v in obj.get("trace", [])]
            xs = [i for i, v in enumerate(trace) if v is not None]
            ys = [v for v in trace if v is not None]
            if xs:
                ax.plot(xs, ys, marker=".", label=name)
        ax.set_xlabel("evaluation")
        ax.set_ylabel("best feasible accuracy")
        ax.set_title("search traces")
        ax.legend(fontsize=7)
        fig.tight_layout()
        trace_png = out / "traces.png"
        fig.savefig(trace_png, dpi=120)
        plt.close(fig)
        figures.append(str(trace_png))

        fig, ax = plt.subplots(figsize=(7, 4.5))
        for name, obj in runs:
            samples = obj.get("samples", [])
            cost = [s["cost"] for s in samples]
            acc = [s["accuracy"] for s in samples]
            ax.scatter(cost, acc, s=12, alpha=0.6, label=name)
            if obj.get("constraint"):
                ax.axvline(obj["constraint"], color="grey", lw=0.6, ls="--")
        ax.set_xlabel("proxy cost")
        ax.set_ylabel("accuracy")
        ax.set_title("evaluated schemes")
        ax.legend(fontsize=7)
        fig.tight_layout()
        scatter_png = out / "accuracy_vs_cost.png"
        fig.savefig(scatter_png, dpi=120)
        plt.close(fig)
        figures.append(str(scatter_png))

    return {
        "summary_csv": str(summary_path),
        "traces_csv": str(traces_path),
        "figures": figures,
        "n_runs": len(runs),
    }
