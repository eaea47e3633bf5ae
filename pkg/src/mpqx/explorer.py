"""Search loop: orthogonal initials -> fit surrogate -> near-constraint GA
proposal -> evaluate, until the budget runs out. Returns the best feasible
scheme. Infeasible samples (possible among the initials) still train the
surrogate but are never eligible as the result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    EvaluationAborted,
    InfeasibleConstraintError,
    SearchSpaceExhausted,
    ValidationError,
)
from .model_ir import NetworkIR, QuantScheme, scheme_uniform
from .proxy import CostModel
from .sampler import SamplerConfig, band, initial_samples, propose
from .surrogate import ForestConfig, fit_scheme_forest


@dataclass(frozen=True)
class SearchConfig:
    mode: str = "oracle"  # oracle | ptq | qat
    bitwidths: tuple = (1, 2, 4, 8)
    constraint_ratio: float | None = 0.6  # fraction of the uniform-8-bit cost
    constraint_absolute: float | None = None
    budget: int = 48
    seed: int = 0
    sampler: SamplerConfig | None = None
    forest: ForestConfig | None = None

    def __post_init__(self):
        if self.mode not in ("oracle", "ptq", "qat"):
            raise ValidationError(f"unknown search mode {self.mode!r}")
        if self.constraint_absolute is None:
            if self.constraint_ratio is None or not (0 < self.constraint_ratio <= 1):
                raise ValidationError("constraint ratio must be in (0, 1]")
        object.__setattr__(self, "sampler", self.sampler or SamplerConfig(
            bitwidths=self.bitwidths, seed=self.seed))
        object.__setattr__(self, "forest", self.forest or ForestConfig(seed=self.seed))
        if self.budget < self.sampler.n_init:
            raise ValidationError("budget must be >= the initial sample count")

    def resolve_constraint(self, network: NetworkIR, cost: CostModel) -> float:
        if self.constraint_absolute is not None:
            return float(self.constraint_absolute)
        base = cost.total(scheme_uniform(network, 8, self.bitwidths + (8,)))
        return self.constraint_ratio * base


@dataclass
class Sample:
    scheme: QuantScheme
    accuracy: float
    cost: float
    feasible: bool
    phase: str  # "init" | "search"

    def to_json(self):
        return {
            "scheme": self.scheme.to_json(),
            "accuracy": self.accuracy,
            "cost": self.cost,
            "feasible": self.feasible,
            "phase": self.phase,
        }


@dataclass
class SearchState:
    constraint: float
    samples: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # best feasible accuracy so far
    best_index: int | None = None

    def record(self, sample: Sample):
        self.samples.append(sample)
        if sample.feasible and (
            self.best_index is None
            or sample.accuracy > self.samples[self.best_index].accuracy
        ):
            self.best_index = len(self.samples) - 1
        best = self.samples[self.best_index].accuracy if self.best_index is not None else None
        self.trace.append(best)

    @property
    def best(self) -> Sample | None:
        return None if self.best_index is None else self.samples[self.best_index]

    def to_json(self):
        return {
            "constraint": self.constraint,
            "samples": [s.to_json() for s in self.samples],
            "trace": self.trace,
            "best_index": self.best_index,
        }


def explore(network: NetworkIR, cfg: SearchConfig, evaluator, cost: CostModel):
    """Run the full search; returns (best QuantScheme, SearchState).

    `evaluator` maps a QuantScheme to an accuracy in [0, 1]; `cost` is the
    additive latency model the constraint is enforced with.
    """
    scfg = replace(cfg.sampler, bitwidths=cfg.bitwidths, seed=cfg.seed)
    constraint = cfg.resolve_constraint(network, cost)
    state = SearchState(constraint=constraint)
    bits = sorted(set(cfg.bitwidths))
    floor_cost = cost.total(QuantScheme(tuple((bits[0], bits[0]) for _ in network.layers)))
    if floor_cost > constraint:
        raise InfeasibleConstraintError(
            f"all-{bits[0]} scheme costs {floor_cost:.6g} > constraint {constraint:.6g}"
        )

    def run_eval(scheme, phase):
        try:
            acc = float(evaluator(scheme))
        except Exception as e:  # persist partial progress for the caller
            raise EvaluationAborted(f"evaluator failed on {scheme.to_json()}: {e}",
                                    state=state) from e
        c = cost.total(scheme)
        state.record(Sample(scheme, acc, c, c <= constraint, phase))

    for scheme in initial_samples(network, scfg):
        run_eval(scheme, "init")

    evaluated = {s.scheme.pairs for s in state.samples}
    n_iter = cfg.budget - len(state.samples)
    for t in range(n_iter):
        forest = fit_scheme_forest(
            [(s.scheme, s.accuracy) for s in state.samples],
            replace(cfg.forest, seed=cfg.seed),
        )
        cost_band = band(t, n_iter, constraint, scfg)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, t]))
        try:
            scheme = propose(network, forest, cost, cost_band, scfg, evaluated, rng=rng)
        except SearchSpaceExhausted:
            if state.best is not None:
                break  # nothing new to evaluate; keep the best found so far
            raise
        if scheme.pairs in evaluated:
            raise ValidationError("sampler proposed an already-evaluated scheme")
        evaluated.add(scheme.pairs)
        run_eval(scheme, "search")

    if state.best is None:
        raise InfeasibleConstraintError("no feasible scheme was found within budget")
    return state.best.scheme, state


def random_search(network: NetworkIR, cfg: SearchConfig, evaluator, cost: CostModel):
    """Baseline: `budget` uniform random feasible schemes (rejection sampled)."""
    constraint = cfg.resolve_constraint(network, cost)
    state = SearchState(constraint=constraint)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 9]))
    bits = sorted(set(cfg.bitwidths))
    pairs = [(bw, ba) for bw in bits for ba in bits]
    L = network.n_layers
    draws = 0
    while len(state.samples) < cfg.budget:
        draws += 1
        if draws > cfg.budget * 10000:
            raise InfeasibleConstraintError("rejection sampling found too few feasible schemes")
        idx = rng.integers(0, len(pairs), size=L)
        scheme = QuantScheme(tuple(pairs[i] for i in idx))
        c = cost.total(scheme)
        if c > constraint:
            continue
        acc = float(evaluator(scheme))
        state.record(Sample(scheme, acc, c, True, "random"))
    return state.best.scheme, state


ABLATION_VARIANTS = ("rf-only", "+orthogonal", "+near-constraint")


def ablation_run(network: NetworkIR, cfg: SearchConfig, evaluator_factory,
                 cost: CostModel, variants=ABLATION_VARIANTS, repeats: int = 10):
    """Compare sampler ingredients with shared per-repetition seeds.

    rf-only: random initials, unbanded proposals. +orthogonal: block initials,
    unbanded. +near-constraint: the full method. `evaluator_factory(seed)`
    builds the evaluator for one repetition. Returns mean best accuracy per
    variant plus the per-run values.
    """
    if not variants:
        raise ValidationError("ablation needs at least one variant")
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ValidationError(f"unknown ablation variant {v!r}")
    results = {v: [] for v in variants}
    for rep in range(repeats):
        seed = cfg.seed + 1000 * rep
        for v in variants:
            scfg = replace(cfg.sampler, seed=seed,
                           init_mode="random" if v == "rf-only" else "orthogonal")
            if v != "+near-constraint":
                scfg = replace(scfg, band_start_frac=0.0, band_end_frac=0.0)
            run_cfg = replace(cfg, seed=seed, sampler=scfg)
            _, state = explore(network, run_cfg, evaluator_factory(seed), cost)
            results[v].append(state.best.accuracy)
    return {
        "repeats": repeats,
        "mean": {v: float(np.mean(results[v])) for v in variants},
        "runs": {v: list(map(float, results[v])) for v in variants},
    }


def state_to_result_json(network: NetworkIR, cfg: SearchConfig, state: SearchState,
                         cost_name: str, base_cost: float, extra=None) -> dict:
    best = state.best
    obj = {
        "network": network.name,
        "mode": cfg.mode,
        "bitwidths": list(cfg.bitwidths),
        "budget": cfg.budget,
        "seed": cfg.seed,
        "cost_model": cost_name,
        "constraint": state.constraint,
        "base_cost": base_cost,
        "constraint_ratio": cfg.constraint_ratio,
        "best": None if best is None else best.to_json(),
        "trace": state.trace,
        "samples": [s.to_json() for s in state.samples],
    }
    if extra:
        obj.update(extra)
    return obj
