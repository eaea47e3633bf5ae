"""Scheme generation: orthogonal initial samples and the near-constraint
genetic sampler that proposes candidates inside a shrinking cost band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleConstraintError, SearchSpaceExhausted, ValidationError
from .model_ir import NetworkIR, QuantScheme
from .proxy import CostModel
from .surrogate import Forest


@dataclass(frozen=True)
class SamplerConfig:
    n_init: int = 16
    bitwidths: tuple = (1, 2, 4, 8)
    protect_ends: bool = True
    band_start_frac: float = 0.8
    band_end_frac: float = 0.5
    ga_population: int = 64
    ga_generations: int = 20
    ga_tournament: int = 3
    seed: int = 0
    init_mode: str = "orthogonal"  # "random" for the ablation baseline

    def __post_init__(self):
        if self.n_init < 3:
            raise ValidationError("n_init must be >= 3 (two extremes plus blocks)")
        banded = 0 < self.band_end_frac <= self.band_start_frac <= 1
        unbanded = self.band_start_frac == self.band_end_frac == 0.0
        if not (banded or unbanded):
            raise ValidationError("need 0 < band_end_frac <= band_start_frac <= 1")
        if len(set(self.bitwidths)) < 2:
            raise ValidationError("bitwidth set needs at least two distinct entries")
        if self.init_mode not in ("orthogonal", "random"):
            raise ValidationError(f"unknown init_mode {self.init_mode!r}")


def _all_pairs(bitwidths):
    bits = sorted(set(bitwidths))
    return [(bw, ba) for bw in bits for ba in bits]


def initial_samples(network: NetworkIR, cfg: SamplerConfig) -> list[QuantScheme]:
    """Two uniform extremes plus samples that each modify one disjoint block
    of a seeded random layer permutation; untouched layers stay at the top
    bitwidth. Block size is ceil(L / (n_init - 2)), indices clamped to L."""
    L = network.n_layers
    if L < 1:
        raise ValidationError("network has no layers")
    bits = sorted(set(cfg.bitwidths))
    b_min, b_max = bits[0], bits[-1]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    if cfg.init_mode == "random":
        pairs = _all_pairs(cfg.bitwidths)
        return [
            QuantScheme(tuple(pairs[i] for i in rng.integers(0, len(pairs), size=L)))
            for _ in range(cfg.n_init)
        ]

    samples = [
        QuantScheme(tuple((b_max, b_max) for _ in range(L))),
        QuantScheme(tuple((b_min, b_min) for _ in range(L))),
    ]
    perm = rng.permutation(L)
    n_blocks = cfg.n_init - 2
    n_m = max(-(-L // n_blocks), 1)  # ceil division
    other_pairs = [p for p in _all_pairs(cfg.bitwidths) if p != (b_max, b_max)]
    for i in range(n_blocks):
        genome = [(b_max, b_max)] * L
        start = i * n_m
        for k in range(start, min(start + n_m, L)):
            genome[perm[k]] = other_pairs[rng.integers(0, len(other_pairs))]
        samples.append(QuantScheme(tuple(genome)))
    return samples


def modified_blocks(network: NetworkIR, cfg: SamplerConfig):
    """Per-sample sets of modified layer indices, for property checks."""
    L = network.n_layers
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    perm = rng.permutation(L)
    n_blocks = cfg.n_init - 2
    n_m = max(-(-L // n_blocks), 1)
    blocks = []
    for i in range(n_blocks):
        start = i * n_m
        blocks.append({int(perm[k]) for k in range(start, min(start + n_m, L))})
    return blocks


def band(t: int, total: int, constraint: float, cfg: SamplerConfig):
    """Cost interval for search iteration t of `total`: the lower edge walks
    linearly from band_start_frac*C down to band_end_frac*C."""
    if total == 0:
        if t > 0:
            raise ValidationError("band: t > 0 with zero total iterations")
        frac = cfg.band_start_frac
    else:
        if not (0 <= t <= total):
            raise ValidationError(f"band: iteration {t} outside [0, {total}]")
        frac = cfg.band_start_frac - (cfg.band_start_frac - cfg.band_end_frac) * t / total
    return frac * constraint, constraint


class GeneSpace:
    """Index-based genomes over the allowed pair list, with a precomputed
    per-layer cost table so repairs run on incremental updates."""

    def __init__(self, network: NetworkIR, cfg: SamplerConfig, cost: CostModel):
        self.pairs = _all_pairs(cfg.bitwidths)
        self.pair_index = {p: j for j, p in enumerate(self.pairs)}
        self.L = network.n_layers
        self.cfg = cfg
        bits = sorted(set(cfg.bitwidths))
        self.bits = bits
        self.b_min, self.b_max = bits[0], bits[-1]
        self.top = self.pair_index[(self.b_max, self.b_max)]
        self.table = cost.table(self.pairs)
        self.pinned = ()
        if cfg.protect_ends and self.L >= 3:
            # the first/last-layer heuristic is meaningless on 1-2 layer nets
            self.pinned = (0, self.L - 1)

    def scheme(self, genome) -> QuantScheme:
        return QuantScheme(tuple(self.pairs[g] for g in genome))

    def cost(self, genome) -> float:
        return float(self.table[np.arange(self.L), genome].sum())

    def pin(self, genome):
        for i in self.pinned:
            genome[i] = self.top
        return genome

    def random_genome(self, rng):
        return self.pin(rng.integers(0, len(self.pairs), size=self.L).tolist())

    def min_cost(self) -> float:
        """Cheapest reachable scheme cost (argmin per free layer, pins fixed)."""
        total = 0.0
        for i in range(self.L):
            total += self.table[i, self.top] if i in self.pinned else self.table[i].min()
        return total

    def _step(self, pair, down: bool):
        """One-notch change: reduce the larger width (ties: weights first) or
        raise the smaller one; falls back to the other width at the rail."""
        bw, ba = pair
        vals = [bw, ba]
        if down:
            order = (0, 1) if bw >= ba else (1, 0)
            for t in order:
                pos = self.bits.index(vals[t])
                if pos > 0:
                    vals[t] = self.bits[pos - 1]
                    return tuple(vals)
            return None
        order = (0, 1) if bw <= ba else (1, 0)
        for t in order:
            pos = self.bits.index(vals[t])
            if pos < len(self.bits) - 1:
                vals[t] = self.bits[pos + 1]
                return tuple(vals)
        return None

    def repair(self, genome, low, high):
        """Greedy walk into [low, high]: repeatedly move the layer with the
        largest (smallest) cost share one notch down (up). None on failure
        after 4L steps or when no layer can move."""
        genome = self.pin(list(genome))
        layer_costs = self.table[np.arange(self.L), genome]
        cost = float(layer_costs.sum())
        free = [i for i in range(self.L) if i not in self.pinned]
        if not free:
            return genome if low <= cost <= high else None
        for _ in range(4 * self.L):
            if low <= cost <= high:
                return genome
            down = bool(cost > high)
            order = sorted(free, key=lambda i: layer_costs[i], reverse=down)
            moved = False
            for i in order:
                nxt = self._step(self.pairs[genome[i]], down)
                if nxt is None:
                    continue
                j = self.pair_index[nxt]
                cost += self.table[i, j] - layer_costs[i]
                layer_costs[i] = self.table[i, j]
                genome[i] = j
                moved = True
                break
            if not moved:
                return None
        return genome if low <= cost <= high else None


def propose(network: NetworkIR, forest: Forest, cost: CostModel, cost_band,
            cfg: SamplerConfig, evaluated: set, rng=None) -> QuantScheme:
    """GA proposal: maximize forest-predicted accuracy over schemes repaired
    into the cost band, skipping already-evaluated candidates. Ties break on
    lower cost, then lexicographic scheme order. Falls back to a uniformly
    random feasible scheme if the GA never finds a fresh candidate."""
    low, high = cost_band
    space = GeneSpace(network, cfg, cost)
    if space.min_cost() > high:
        raise InfeasibleConstraintError(
            f"cheapest reachable scheme costs {space.min_cost():.6g} > constraint {high:.6g}"
        )
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))

    def predict_batch(genomes):
        x = np.array(
            [[b for g in genome for b in space.pairs[g]] for genome in genomes],
            dtype=np.float64,
        )
        return forest.predict(x)

    population = []
    attempts = 0
    while len(population) < cfg.ga_population and attempts < cfg.ga_population * 8:
        attempts += 1
        g = space.repair(space.random_genome(rng), low, high)
        if g is not None:
            population.append(g)
    if not population:
        return _random_feasible(space, high, evaluated, rng)

    best = None  # (key, genome) with key = (-pred, cost, pairs)

    def consider(genomes, preds):
        nonlocal best
        for g, p in zip(genomes, preds):
            pairs = tuple(space.pairs[i] for i in g)
            if pairs in evaluated:
                continue
            key = (-float(p), space.cost(g), pairs)
            if best is None or key < best[0]:
                best = (key, list(g))

    preds = predict_batch(population)
    consider(population, preds)
    for _ in range(cfg.ga_generations):
        pop_n = cfg.ga_population
        contenders = rng.integers(0, len(population), size=(pop_n, 2, cfg.ga_tournament))
        winners = contenders[
            np.arange(pop_n)[:, None], np.arange(2)[None, :],
            np.argmax(preds[contenders], axis=2),
        ]
        cross_mask = rng.random((pop_n, space.L)) < 0.5
        mut_mask = rng.random((pop_n, space.L)) < (1.0 / space.L)
        mut_vals = rng.integers(0, len(space.pairs), size=(pop_n, space.L))
        new_pop = []
        for c in range(pop_n):
            ia, ib = int(winners[c, 0]), int(winners[c, 1])
            a, b = population[ia], population[ib]
            child = [a[i] if cross_mask[c, i] else b[i] for i in range(space.L)]
            for i in range(space.L):
                if mut_mask[c, i] and i not in space.pinned:
                    child[i] = int(mut_vals[c, i])
            child = space.repair(child, low, high)
            if child is None:
                child = space.repair(space.random_genome(rng), low, high)
            new_pop.append(child if child is not None else population[ia])
        population = new_pop
        preds = predict_batch(population)
        consider(population, preds)

    if best is None:
        return _random_feasible(space, high, evaluated, rng)
    return space.scheme(best[1])


def _random_feasible(space: GeneSpace, high, evaluated, rng):
    for _ in range(4096):
        g = space.random_genome(rng)
        pairs = tuple(space.pairs[i] for i in g)
        if pairs not in evaluated and space.cost(g) <= high:
            return QuantScheme(pairs)
    raise SearchSpaceExhausted(
        "could not draw an unevaluated feasible scheme; the reachable space "
        "appears exhausted (consider a larger bitwidth set or protect_ends=False)"
    )
