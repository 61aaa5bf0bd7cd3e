"""Negative selection by steady-state genetic search with deterministic crowding.

Detectors are scored with the Sum of Weighted Ratios: each raw objective is
min-max normalized over the current population (plus the candidate child),
then generality is rewarded and self-coverage penalized.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .detectors import (
    UNSPECIFIED,
    Detector,
    DetectorSet,
    conditions,
    count_self_matches,
    generality,
    random_detector,
    repair_genes,
    similarity,
)
from .errors import EmptyDataError
from .schema import FeatureSchema

log = logging.getLogger(__name__)


@dataclass
class GaConfig:
    population_size: int = 1600
    iterations: int = 50000
    crossover_rate: float = 1.0
    mutation_rate: float | None = None  # None means 1 / gene count
    w1: float = 0.5
    w2: float = 0.5
    seed: int = 0
    children_per_step: int = 1

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not (0.0 <= self.w1 <= 1.0 and 0.0 <= self.w2 <= 1.0):
            raise ValueError("objective weights must lie in [0, 1]")
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError(f"objective weights must sum to 1 (got {self.w1} + {self.w2})")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.children_per_step not in (1, 2):
            raise ValueError("children_per_step must be 1 or 2")

    def effective_mutation_rate(self, gene_count: int) -> float:
        return 1.0 / gene_count if self.mutation_rate is None else self.mutation_rate


@dataclass(frozen=True)
class ObjectiveStats:
    min1: float
    max1: float
    min2: float
    max2: float

    @classmethod
    def of(cls, obj1, obj2) -> "ObjectiveStats":
        return cls(float(np.min(obj1)), float(np.max(obj1)), float(np.min(obj2)), float(np.max(obj2)))


def fitness_ratio(obj: float, lo: float, hi: float) -> float:
    """Min-max normalized objective; 0 when the population is degenerate."""
    if hi == lo:
        return 0.0
    return (obj - lo) / (hi - lo)


def fitness(obj1: float, obj2: float, stats: ObjectiveStats, w1: float, w2: float) -> float:
    return w1 * fitness_ratio(obj1, stats.min1, stats.max1) - w2 * fitness_ratio(
        obj2, stats.min2, stats.max2
    )


class SelfIndex:
    """Exact self-match counter backed by packed per-field bitsets.

    For every field, ``prefix[j]`` holds the rows whose value is below the
    j-th legal value, so an inclusive range is ``prefix[hi + 1] & ~prefix[lo]``.
    Counts are identical to :func:`count_self_matches`.
    """

    def __init__(self, self_values: np.ndarray, schema: FeatureSchema):
        self.schema = schema
        self.values = np.asarray(self_values)
        self.n = self.values.shape[0]
        self._all = np.packbits(np.ones(self.n, dtype=bool))
        self._prefix = []
        self._offset = []
        for i, f in enumerate(schema.features):
            legal = f.legal_values
            col = self.values[:, i]
            pref = [np.packbits(col < v) for v in legal]
            pref.append(self._all)
            self._prefix.append(pref)
            self._offset.append(legal[0])

    def __len__(self):
        return self.n

    def count(self, d: Detector) -> int:
        acc = self._all
        for f, lo, hi in conditions(d, self.schema):
            pref = self._prefix[f]
            off = self._offset[f]
            acc = acc & pref[hi - off + 1] & ~pref[lo - off]
        return int(np.bitwise_count(acc).sum())


def raw_objectives(d: Detector, self_set, schema: FeatureSchema) -> tuple[float, int]:
    """``(generality, self matches)`` for one detector."""
    if isinstance(self_set, SelfIndex):
        obj2 = self_set.count(d)
    else:
        obj2 = count_self_matches(d, np.asarray(self_set), schema)
    return generality(d, schema), obj2


def uniform_crossover(p1: Detector, p2: Detector, rng, schema: FeatureSchema) -> Detector:
    mask = rng.random(len(p1.genes)) < 0.5
    genes = [a if m else b for a, b, m in zip(p1.genes, p2.genes, mask)]
    return Detector(repair_genes(genes, schema))


def _gene_legal_values(schema: FeatureSchema) -> list[tuple[int, ...]]:
    out = []
    for slot in schema.gene_slots:
        out.extend([slot.legal_values] * (2 if slot.is_interval else 1))
    return out


def mutate(d: Detector, rate: float, rng, schema: FeatureSchema) -> Detector:
    """Each gene mutates with probability ``rate``: half the time to -1,
    otherwise to a uniformly drawn legal value."""
    genes = list(d.genes)
    hits = np.flatnonzero(rng.random(len(genes)) < rate)
    if hits.size == 0:
        return d
    legal = _gene_legal_values(schema)
    for g in hits:
        if rng.random() < 0.5:
            genes[g] = UNSPECIFIED
        else:
            genes[g] = legal[g][int(rng.integers(0, len(legal[g])))]
    return Detector(repair_genes(genes, schema))


@dataclass
class Population:
    detectors: list[Detector]
    obj1: np.ndarray
    obj2: np.ndarray

    @classmethod
    def evaluate(cls, detectors, self_set, schema) -> "Population":
        objs = [raw_objectives(d, self_set, schema) for d in detectors]
        return cls(
            list(detectors),
            np.array([o[0] for o in objs], dtype=float),
            np.array([o[1] for o in objs], dtype=float),
        )

    def __len__(self):
        return len(self.detectors)

    def fitnesses(self, w1: float, w2: float, stats: ObjectiveStats | None = None) -> np.ndarray:
        stats = stats or ObjectiveStats.of(self.obj1, self.obj2)
        return np.array(
            [fitness(a, b, stats, w1, w2) for a, b in zip(self.obj1, self.obj2)]
        )


@dataclass
class Replacement:
    slot: int
    child_fitness: float
    parent_fitness: float


@dataclass
class StepResult:
    parents: tuple[int, int]
    stats: ObjectiveStats
    replacements: list[Replacement] = field(default_factory=list)


def _draw_parents(n: int, rng) -> tuple[int, int]:
    a = int(rng.integers(0, n))
    b = int(rng.integers(0, n - 1))
    if b >= a:
        b += 1
    return a, b


def crowding_step(pop: Population, self_set, config: GaConfig, rng, schema: FeatureSchema) -> StepResult:
    """One steady-state iteration, updating ``pop`` in place.

    Random draws happen in this order: two distinct parent slots, the
    crossover gate and mask, then per-gene mutation draws.  The child's raw
    objectives join the population's when computing the normalization
    snapshot; the child replaces the more similar parent (the first-drawn
    one on a tie) only when strictly fitter under that snapshot.
    """
    ia, ib = _draw_parents(len(pop), rng)
    p1, p2 = pop.detectors[ia], pop.detectors[ib]
    rate = config.effective_mutation_rate(schema.gene_count)

    if config.children_per_step == 1:
        if rng.random() < config.crossover_rate:
            child = uniform_crossover(p1, p2, rng, schema)
        else:
            child = p1
        children = [mutate(child, rate, rng, schema)]
    else:
        if rng.random() < config.crossover_rate:
            mask = rng.random(len(p1.genes)) < 0.5
            c1 = [a if m else b for a, b, m in zip(p1.genes, p2.genes, mask)]
            c2 = [b if m else a for a, b, m in zip(p1.genes, p2.genes, mask)]
            pair = [Detector(repair_genes(c1, schema)), Detector(repair_genes(c2, schema))]
        else:
            pair = [p1, p2]
        children = [mutate(c, rate, rng, schema) for c in pair]

    cobjs = [raw_objectives(c, self_set, schema) for c in children]
    stats = ObjectiveStats.of(
        np.concatenate([pop.obj1, [o[0] for o in cobjs]]),
        np.concatenate([pop.obj2, [o[1] for o in cobjs]]),
    )

    def fit(o1, o2):
        return fitness(o1, o2, stats, config.w1, config.w2)

    if len(children) == 1:
        child = children[0]
        nearer = ia if similarity(child, p1, schema) >= similarity(child, p2, schema) else ib
        pairs = [(nearer, 0)]
    else:
        c1, c2 = children
        straight = similarity(p1, c1, schema) + similarity(p2, c2, schema)
        crossed = similarity(p1, c2, schema) + similarity(p2, c1, schema)
        pairs = [(ia, 0), (ib, 1)] if straight >= crossed else [(ia, 1), (ib, 0)]

    # fitness snapshot is taken before any slot is overwritten
    decisions = []
    for slot, ci in pairs:
        cf = fit(*cobjs[ci])
        pf = fit(pop.obj1[slot], pop.obj2[slot])
        decisions.append((slot, ci, cf, pf))

    result = StepResult((ia, ib), stats)
    for slot, ci, cf, pf in decisions:
        if cf > pf:
            pop.detectors[slot] = children[ci]
            pop.obj1[slot], pop.obj2[slot] = cobjs[ci]
            result.replacements.append(Replacement(slot, cf, pf))
    return result


def purge(detectors, self_set, schema: FeatureSchema) -> list[Detector]:
    """Keep only the detectors that match no record in ``self_set``."""
    if not isinstance(self_set, SelfIndex):
        self_set = SelfIndex(np.asarray(self_set), schema)
    return [d for d in detectors if self_set.count(d) == 0]


def generate_detectors(
    self_values: np.ndarray,
    schema: FeatureSchema,
    config: GaConfig,
    purge_values: np.ndarray | None = None,
    log_every: int = 1000,
) -> tuple[DetectorSet, list[tuple]]:
    """Evolve a detector population on normal-only records and purge it.

    ``self_values`` drives the self-match objective; ``purge_values`` (by
    default the same records) is the set every surviving detector must
    avoid.  Returns the detector set and convergence log rows of
    ``(iteration, best_fitness, mean_generality, mean_self_matches)``.
    """
    self_values = np.asarray(self_values)
    if self_values.shape[0] == 0:
        raise EmptyDataError("empty-self-set: detector generation needs normal records")
    rng = np.random.default_rng(config.seed)
    index = SelfIndex(self_values, schema)
    pop = Population.evaluate(
        [random_detector(schema, rng) for _ in range(config.population_size)], index, schema
    )

    run_log = []

    def record(it):
        best = float(pop.fitnesses(config.w1, config.w2).max())
        run_log.append((it, best, float(pop.obj1.mean()), float(pop.obj2.mean())))

    record(0)
    for it in range(1, config.iterations + 1):
        crowding_step(pop, index, config, rng, schema)
        if log_every and (it % log_every == 0 or it == config.iterations):
            record(it)
            log.debug("iteration %d best %.4f", it, run_log[-1][1])

    purge_index = index if purge_values is None else SelfIndex(np.asarray(purge_values), schema)
    survivors = purge(pop.detectors, purge_index, schema)
    log.info("purge kept %d of %d detectors", len(survivors), len(pop))
    meta = {
        "seed": config.seed,
        "weights": [config.w1, config.w2],
        "iterations": config.iterations,
        "ga": asdict(config),
        "self_records": int(self_values.shape[0]),
        "purge_records": int(len(purge_index)),
        "population_before_purge": len(pop),
    }
    return DetectorSet(survivors, schema.digest, meta), run_log
