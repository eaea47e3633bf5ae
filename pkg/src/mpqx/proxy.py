"""Latency cost models: raw BOPs and the fitted CBOPs proxy.

CBOPs uses three per-layer features derived from the bitwidth pair and the
layer's MAC count:

    bmacs  = max(bw, ba) * MACs
    aloads = ba * MACs
    wloads = bw * MACs

A proxy carries one sub-model per kernel kind (MatMul -> Linear, Conv2D) and
a per-layer constant, so a network prediction is the sum of per-layer terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model_ir import KIND_CONV2D, KIND_LINEAR, NetworkIR, QuantScheme
from .surrogate import Forest, ForestConfig, fit_forest

KIND_BOPS = "bops"
KIND_LINEAR_CBOPS = "linear-cbops"
KIND_TREE_CBOPS = "tree-cbops"
KIND_LINEAR_BOPS = "linear-bops"  # 1-D fitted line on BOPs, for R^2 comparisons

_KIND_ALIASES = {
    "linear": KIND_LINEAR_CBOPS,
    "tree": KIND_TREE_CBOPS,
    KIND_BOPS: KIND_BOPS,
    KIND_LINEAR_CBOPS: KIND_LINEAR_CBOPS,
    KIND_TREE_CBOPS: KIND_TREE_CBOPS,
    KIND_LINEAR_BOPS: KIND_LINEAR_BOPS,
}


@dataclass
class CostFeatures:
    bmacs: np.ndarray
    aloads: np.ndarray
    wloads: np.ndarray


@dataclass
class ProfileRecord:
    kernel: str
    bw: int
    ba: int
    dims: tuple
    macs: int
    cycles: float

    def features(self):
        return (
            max(self.bw, self.ba) * self.macs,
            self.ba * self.macs,
            self.bw * self.macs,
        )

    def bops(self):
        return self.bw * self.ba * self.macs


@dataclass
class HardwareProfile:
    hardware_id: str
    records: list

    def validate(self):
        if not self.records:
            raise ValidationError("hardware profile has no records")
        if any(r.cycles <= 0 for r in self.records):
            raise ValidationError("hardware profile contains non-positive cycle counts")
        return self

    def to_json(self):
        return {
            "hardware_id": self.hardware_id,
            "records": [
                {
                    "kernel": r.kernel,
                    "bw": r.bw,
                    "ba": r.ba,
                    "dims": list(r.dims),
                    "macs": r.macs,
                    "cycles": r.cycles,
                }
                for r in self.records
            ],
        }

    @classmethod
    def from_json(cls, obj):
        records = [
            ProfileRecord(
                kernel=r["kernel"],
                bw=int(r["bw"]),
                ba=int(r["ba"]),
                dims=tuple(r.get("dims", ())),
                macs=int(r["macs"]),
                cycles=float(r["cycles"]),
            )
            for r in obj["records"]
        ]
        return cls(hardware_id=obj.get("hardware_id", "unknown"), records=records)


def save_profile(profile: HardwareProfile, path):
    Path(path).write_text(json.dumps(profile.to_json(), indent=2) + "\n")


def load_profile(path) -> HardwareProfile:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"profile not found: {path}")
    return HardwareProfile.from_json(json.loads(p.read_text())).validate()


def bops(network: NetworkIR, scheme: QuantScheme) -> float:
    """Hardware-agnostic bit-operation count: sum of bw*ba*MACs."""
    if len(scheme) != network.n_layers:
        raise ValidationError("scheme length does not match network")
    return float(sum(bw * ba * l.macs for l, (bw, ba) in zip(network.layers, scheme)))


def cost_features(network: NetworkIR, scheme: QuantScheme) -> CostFeatures:
    if len(scheme) != network.n_layers:
        raise ValidationError("scheme length does not match network")
    macs = np.array([l.macs for l in network.layers], dtype=np.float64)
    bw = np.array([p[0] for p in scheme], dtype=np.float64)
    ba = np.array([p[1] for p in scheme], dtype=np.float64)
    return CostFeatures(
        bmacs=np.maximum(bw, ba) * macs,
        aloads=ba * macs,
        wloads=bw * macs,
    )


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass
class LinearParams:
    beta_m: float
    beta_a: float
    beta_w: float
    const: float
    ridge_fallback: bool = False

    def predict(self, feats: np.ndarray) -> np.ndarray:
        return (
            self.beta_m * feats[:, 0]
            + self.beta_a * feats[:, 1]
            + self.beta_w * feats[:, 2]
            + self.const
        )


@dataclass
class BopsLineParams:
    slope: float
    intercept: float

    def predict(self, bops_values: np.ndarray) -> np.ndarray:
        return self.slope * np.asarray(bops_values, dtype=np.float64) + self.intercept


@dataclass
class ProxyModel:
    kind: str
    hardware_id: str = "unknown"
    per_kernel: dict = field(default_factory=dict)
    fit_report: dict = field(default_factory=dict)
    forest_config: ForestConfig | None = None

    def predict_layer(self, kernel: str, bw: int, ba: int, macs: int) -> float:
        if self.kind == KIND_BOPS:
            return float(bw * ba * macs)
        model = self.per_kernel.get(kernel)
        if model is None:
            raise ValidationError(f"proxy has no sub-model for kernel {kernel!r}")
        feats = np.array([[max(bw, ba) * macs, ba * macs, bw * macs]], dtype=np.float64)
        if self.kind == KIND_LINEAR_CBOPS:
            return float(model.predict(feats)[0])
        if self.kind == KIND_TREE_CBOPS:
            return float(model.predict(feats)[0])
        if self.kind == KIND_LINEAR_BOPS:
            return float(model.predict(np.array([bw * ba * macs]))[0])
        raise ValidationError(f"unknown proxy kind {self.kind!r}")


def _holdout_split(n: int, seed: int = 20240, frac: float = 0.2):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)
    n_test = max(1, int(round(frac * n))) if n > 4 else 0
    return idx[n_test:], idx[:n_test]


def _ols(x: np.ndarray, y: np.ndarray):
    """Least squares with column scaling; falls back to tiny ridge when the
    design matrix is rank deficient. Returns (coefficients, used_ridge)."""
    n, d = x.shape
    col = np.maximum(np.abs(x).max(axis=0), 1e-30)
    xs = x / col
    rank = np.linalg.matrix_rank(xs)
    if rank < d:
        lam = 1e-6
        beta_s = np.linalg.solve(xs.T @ xs + lam * np.eye(d), xs.T @ y)
        return beta_s / col, True
    beta_s, *_ = np.linalg.lstsq(xs, y, rcond=None)
    return beta_s / col, False


def _fit_kind_report(y_true, y_pred):
    rmse = float(np.sqrt(np.mean((np.asarray(y_true) - np.asarray(y_pred)) ** 2)))
    if np.ptp(y_true) == 0:  # constant measurements: R^2 is degenerate
        scale = max(abs(float(np.mean(y_true))), 1.0)
        r2 = 1.0 if rmse <= 1e-6 * scale else 0.0
    else:
        r2 = r_squared(y_true, y_pred)
    return {"r2": r2, "rmse": rmse}


def fit_proxy(profile: HardwareProfile, kind: str,
              forest_config: ForestConfig | None = None,
              holdout_seed: int = 20240) -> ProxyModel:
    """Fit a latency proxy from kernel-benchmark records.

    Linear and bops-line sub-models use OLS; the tree variant reuses the
    regression forest over the three CBOPs features. A seeded 80/20 holdout
    split per kernel kind produces the fit report.
    """
    kind = _KIND_ALIASES.get(kind)
    if kind is None:
        raise ValidationError(f"unknown proxy kind")
    profile.validate()
    model = ProxyModel(kind=kind, hardware_id=profile.hardware_id)
    if kind == KIND_BOPS:
        return model
    if kind == KIND_TREE_CBOPS:
        model.forest_config = forest_config or ForestConfig(seed=holdout_seed)
    report = {}
    for kernel in (KIND_LINEAR, KIND_CONV2D):
        recs = [r for r in profile.records if r.kernel == kernel]
        if not recs:
            continue
        if len(recs) < 8:
            raise ValidationError(f"need >= 8 profile records per kernel, got {len(recs)} for {kernel}")
        feats = np.array([r.features() for r in recs], dtype=np.float64)
        y = np.array([r.cycles for r in recs], dtype=np.float64)
        train, test = _holdout_split(len(recs), seed=holdout_seed)
        if kind == KIND_LINEAR_CBOPS:
            x = np.column_stack([feats, np.ones(len(recs))])
            beta, ridge = _ols(x[train], y[train])
            sub = LinearParams(*[float(b) for b in beta], ridge_fallback=ridge)
            pred_all = sub.predict(feats)
        elif kind == KIND_LINEAR_BOPS:
            b = np.array([r.bops() for r in recs], dtype=np.float64)
            x = np.column_stack([b, np.ones(len(recs))])
            beta, _ = _ols(x[train], y[train])
            sub = BopsLineParams(slope=float(beta[0]), intercept=float(beta[1]))
            pred_all = sub.predict(b)
        else:
            sub = fit_forest(feats[train], y[train], model.forest_config)
            pred_all = sub.predict(feats)
        model.per_kernel[kernel] = sub
        split = test if len(test) else train
        report[kernel] = _fit_kind_report(y[split], pred_all[split])
    model.fit_report = report
    return model


def predict_latency(model: ProxyModel, network: NetworkIR, scheme: QuantScheme) -> float:
    if model.kind != KIND_BOPS and not model.per_kernel:
        raise ValidationError("proxy model is not fitted")
    if len(scheme) != network.n_layers:
        raise ValidationError("scheme length does not match network")
    total = 0.0
    for layer, (bw, ba) in zip(network.layers, scheme):
        total += model.predict_layer(layer.kind, bw, ba, layer.macs)
    return max(total, 0.0)


def r_squared(y_true, y_pred) -> float:
    """Residual R^2: 1 - SS_res / SS_tot. Used for holdout fit reports."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        raise ValidationError("zero-variance measurements: R^2 undefined")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def scatter_r_squared(y_true, y_pred) -> float:
    """Squared Pearson correlation: the R^2 of the best affine map from
    predictions to measurements. Scale/offset invariant, which keeps the
    comparison fair when a proxy was fitted on kernel-benchmark geometry and
    applied to a different network."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    a = y_true - y_true.mean()
    b = y_pred - y_pred.mean()
    denom = float(np.sqrt(np.sum(a**2) * np.sum(b**2)))
    if denom == 0:
        raise ValidationError("zero-variance data: correlation undefined")
    return (float(np.sum(a * b)) / denom) ** 2


def _ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.arange(1, len(x) + 1)
    # average ties
    vals, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.zeros(len(vals))
    np.add.at(sums, inv, ranks)
    return sums[inv] / counts[inv]


def spearman(a, b) -> float:
    ra, rb = _ranks(np.asarray(a, dtype=np.float64)), _ranks(np.asarray(b, dtype=np.float64))
    sa, sb = ra - ra.mean(), rb - rb.mean()
    denom = float(np.sqrt(np.sum(sa**2) * np.sum(sb**2)))
    if denom == 0:
        raise ValidationError("zero-variance ranks: correlation undefined")
    return float(np.sum(sa * sb)) / denom


def correlation_report(model: ProxyModel, network: NetworkIR, schemes,
                       simulator) -> dict:
    """Scatter R^2 and Spearman rank correlation of proxy predictions against
    simulated latencies for a list of schemes. `simulator` maps a scheme to
    measured cycles."""
    if len(schemes) < 2:
        raise ValidationError("correlation report needs at least 2 schemes")
    preds = np.array([predict_latency(model, network, s) for s in schemes])
    meas = np.array([float(simulator(s)) for s in schemes])
    return {"r2": scatter_r_squared(meas, preds), "rank_corr": spearman(preds, meas)}


# ---------------------------------------------------------------------------
# Additive cost interface used by the sampler / explorer. Both BOPs and the
# fitted proxies decompose into independent per-layer terms, which lets the
# genetic repair loop use an L x pairs lookup table instead of re-predicting
# whole schemes.
# ---------------------------------------------------------------------------


class CostModel:
    """Base: per-layer additive cost over (bw, ba) pairs."""

    name = "cost"

    def __init__(self, network: NetworkIR):
        self.network = network

    def layer_cost(self, layer, bw: int, ba: int) -> float:
        raise NotImplementedError

    def total(self, scheme: QuantScheme) -> float:
        if len(scheme) != self.network.n_layers:
            raise ValidationError("scheme length does not match network")
        return max(
            sum(self.layer_cost(l, bw, ba) for l, (bw, ba) in zip(self.network.layers, scheme)),
            0.0,
        )

    def __call__(self, scheme: QuantScheme) -> float:
        return self.total(scheme)

    def table(self, pairs) -> np.ndarray:
        """Cost lookup of shape [n_layers, len(pairs)]."""
        out = np.zeros((self.network.n_layers, len(pairs)), dtype=np.float64)
        for i, layer in enumerate(self.network.layers):
            for j, (bw, ba) in enumerate(pairs):
                out[i, j] = self.layer_cost(layer, bw, ba)
        return out


class BopsCost(CostModel):
    name = "bops"

    def layer_cost(self, layer, bw, ba):
        return float(bw * ba * layer.macs)


class ProxyCost(CostModel):
    def __init__(self, model: ProxyModel, network: NetworkIR):
        super().__init__(network)
        if model.kind != KIND_BOPS and not model.per_kernel:
            raise ValidationError("proxy model is not fitted")
        self.model = model
        self.name = model.kind

    def layer_cost(self, layer, bw, ba):
        return self.model.predict_layer(layer.kind, bw, ba, layer.macs)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_proxy(model: ProxyModel, path):
    obj = {
        "kind": model.kind,
        "hardware_id": model.hardware_id,
        "fit_report": model.fit_report,
        "per_kernel": {},
    }
    if model.forest_config is not None:
        obj["forest_config"] = model.forest_config.to_json()
    for kernel, sub in model.per_kernel.items():
        if isinstance(sub, LinearParams):
            obj["per_kernel"][kernel] = {
                "type": "linear",
                "beta_m": sub.beta_m,
                "beta_a": sub.beta_a,
                "beta_w": sub.beta_w,
                "const": sub.const,
                "ridge_fallback": sub.ridge_fallback,
            }
        elif isinstance(sub, BopsLineParams):
            obj["per_kernel"][kernel] = {
                "type": "bops-line",
                "slope": sub.slope,
                "intercept": sub.intercept,
            }
        else:
            obj["per_kernel"][kernel] = {"type": "forest", "forest": sub.to_json()}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_proxy(path) -> ProxyModel:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"proxy file not found: {path}")
    obj = json.loads(p.read_text())
    model = ProxyModel(kind=obj["kind"], hardware_id=obj.get("hardware_id", "unknown"),
                       fit_report=obj.get("fit_report", {}))
    if "forest_config" in obj:
        model.forest_config = ForestConfig.from_json(obj["forest_config"])
    for kernel, sub in obj.get("per_kernel", {}).items():
        if sub["type"] == "linear":
            model.per_kernel[kernel] = LinearParams(
                sub["beta_m"], sub["beta_a"], sub["beta_w"], sub["const"],
                ridge_fallback=sub.get("ridge_fallback", False),
            )
        elif sub["type"] == "bops-line":
            model.per_kernel[kernel] = BopsLineParams(sub["slope"], sub["intercept"])
        else:
            model.per_kernel[kernel] = Forest.from_json(sub["forest"])
    return model
