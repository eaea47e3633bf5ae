import numpy as np
import pytest

from mpqx.errors import EvaluationAborted, InfeasibleConstraintError, ValidationError
from mpqx.evaluate import SyntheticOracle
from mpqx.explorer import (
    SearchConfig,
    ablation_run,
    explore,
    random_search,
    state_to_result_json,
)
from mpqx.model_ir import NetworkIR, QuantScheme, make_linear
from mpqx.proxy import BopsCost
from mpqx.sampler import SamplerConfig
from mpqx.surrogate import ForestConfig


def make_net(L, macs=64):
    return NetworkIR("n", [make_linear(i, (macs,), (1,)) for i in range(L)])


def small_cfg(seed=0, budget=20, n_init=8, bits=(1, 2, 4, 8), ratio=0.6):
    return SearchConfig(
        mode="oracle",
        bitwidths=bits,
        constraint_ratio=ratio,
        budget=budget,
        seed=seed,
        sampler=SamplerConfig(n_init=n_init, seed=seed, ga_population=32,
                              ga_generations=8),
        forest=ForestConfig(n_trees=20, seed=seed),
    )


def test_basic_run_and_guarantees():
    net = make_net(6)
    oracle = SyntheticOracle.build(6, seed=2024)
    cost = BopsCost(net)
    cfg = small_cfg(seed=1)
    best, state = explore(net, cfg, oracle, cost)
    assert cost.total(best) <= state.constraint
    assert len(state.samples) <= cfg.budget
    pairs = [s.scheme.pairs for s in state.samples if s.phase == "search"]
    assert len(pairs) == len(set(pairs))
    trace = [t for t in state.trace if t is not None]
    assert all(a <= b for a, b in zip(trace, trace[1:]))
    assert state.trace[-1] == state.best.accuracy


def test_budget_equals_n_init():
    net = make_net(5)
    oracle = SyntheticOracle.build(5, seed=2024)
    cost = BopsCost(net)
    cfg = small_cfg(seed=3, budget=8, n_init=8)
    best, state = explore(net, cfg, oracle, cost)
    assert len(state.samples) == 8
    assert all(s.phase == "init" for s in state.samples)
    feasible = [s for s in state.samples if s.feasible]
    assert state.best.accuracy == max(s.accuracy for s in feasible)


def test_ratio_one_keeps_uniform_top_feasible():
    net = make_net(4)
    oracle = SyntheticOracle.build(4, seed=2024)
    cost = BopsCost(net)
    cfg = small_cfg(seed=5, budget=12, n_init=8, ratio=1.0)
    best, state = explore(net, cfg, oracle, cost)
    top = QuantScheme(((8, 8),) * 4)
    assert cost.total(top) <= state.constraint
    assert state.best.accuracy >= oracle(top) - 1e-12


def test_infeasible_constraint_detected():
    net = make_net(4)
    oracle = SyntheticOracle.build(4, seed=2024)
    cost = BopsCost(net)
    with pytest.raises((InfeasibleConstraintError, ValidationError)):
        cfg = SearchConfig(mode="oracle", bitwidths=(4, 8), constraint_ratio=0.1,
                           budget=12, seed=0,
                           sampler=SamplerConfig(n_init=8, seed=0, bitwidths=(4, 8)))
        explore(net, cfg, oracle, cost)


def test_constraint_guarantee_many_seeds():
    net = make_net(6)
    oracle = SyntheticOracle.build(6, seed=2024)
    cost = BopsCost(net)
    for seed in range(10):
        cfg = small_cfg(seed=seed, budget=14, n_init=8, ratio=0.5)
        best, state = explore(net, cfg, oracle, cost)
        assert cost.total(best) <= state.constraint


def test_seed_determinism_bit_identical():
    net = make_net(6)
    oracle = SyntheticOracle.build(6, seed=2024)
    cost = BopsCost(net)
    runs = []
    for _ in range(2):
        _, state = explore(net, small_cfg(seed=7), oracle, cost)
        runs.append([(s.scheme.pairs, s.accuracy, s.cost) for s in state.samples])
    assert runs[0] == runs[1]


def test_beats_random_search_on_average():
    net = make_net(8)
    oracle = SyntheticOracle.build(8, seed=2024)
    cost = BopsCost(net)
    full, rand = [], []
    for seed in range(5):
        cfg = small_cfg(seed=seed, budget=24, n_init=10)
        _, state = explore(net, cfg, oracle, cost)
        full.append(state.best.accuracy)
        _, rstate = random_search(net, cfg, oracle, cost)
        rand.append(rstate.best.accuracy)
    assert np.mean(full) >= np.mean(rand)


def test_evaluator_failure_persists_state():
    net = make_net(4)
    cost = BopsCost(net)
    calls = {"n": 0}

    def flaky(scheme):
        calls["n"] += 1
        if calls["n"] > 5:
            raise RuntimeError("boom")
        return 0.5

    with pytest.raises(EvaluationAborted) as err:
        explore(net, small_cfg(seed=0, budget=12, n_init=8), flaky, cost)
    assert err.value.state is not None
    assert len(err.value.state.samples) == 5


def test_ablation_variants_and_ordering():
    net = make_net(6)
    cost = BopsCost(net)
    oracle = SyntheticOracle.build(6, seed=2024)
    cfg = small_cfg(seed=0, budget=16, n_init=8)
    table = ablation_run(net, cfg, lambda seed: oracle, cost,
                         variants=("rf-only", "+near-constraint"), repeats=3)
    assert set(table["mean"]) == {"rf-only", "+near-constraint"}
    assert len(table["runs"]["rf-only"]) == 3
    with pytest.raises(ValidationError):
        ablation_run(net, cfg, lambda seed: oracle, cost, variants=(), repeats=1)
    with pytest.raises(ValidationError):
        ablation_run(net, cfg, lambda seed: oracle, cost, variants=("bogus",), repeats=1)


def test_result_json_shape():
    net = make_net(4)
    oracle = SyntheticOracle.build(4, seed=2024)
    cost = BopsCost(net)
    cfg = small_cfg(seed=2, budget=10, n_init=8)
    _, state = explore(net, cfg, oracle, cost)
    obj = state_to_result_json(net, cfg, state, cost.name, 1000.0)
    assert obj["cost_model"] == "bops"
    assert obj["best"]["accuracy"] == state.best.accuracy
    assert len(obj["samples"]) == len(state.samples)
    assert obj["trace"] == state.trace


def test_invalid_configs():
    with pytest.raises(ValidationError):
        SearchConfig(mode="magic")
    with pytest.raises(ValidationError):
        SearchConfig(constraint_ratio=0.0)
    with pytest.raises(ValidationError):
        SearchConfig(budget=4, sampler=SamplerConfig(n_init=8))
