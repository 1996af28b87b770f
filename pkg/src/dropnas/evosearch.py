"""Evolutionary search over dropout configurations.

The aim being maximised is::

    aim = eta * accuracy - mu * ece + beta * ape - lambda * latency

Each generation evaluates the population, keeps the top ``parent_count``
candidates as parents (elitism), and refills the population with mutated and
crossed-over children.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, EvaluationError, GenomeError
from .metrics import EvalMetrics
from .supernet import Genome, sample_uniform

log = logging.getLogger(__name__)

MAX_CHILD_ATTEMPTS = 32
MAX_FILL_ATTEMPTS = 1000


@dataclass(frozen=True)
class AimWeights:
    eta: float = 1.0
    mu: float = 1.0
    beta: float = 1.0
    lam: float = 0.1

    def __post_init__(self):
        w = (self.eta, self.mu, self.beta, self.lam)
        if any(v < 0 or math.isnan(v) for v in w) or not any(v > 0 for v in w):
            raise ConfigError(f"aim weights must be non-negative with at least one positive: {w}")

    def scaled(self, alpha: float) -> "AimWeights":
        return AimWeights(self.eta * alpha, self.mu * alpha, self.beta * alpha, self.lam * alpha)


def aim_score(m: EvalMetrics, w: AimWeights) -> float:
    return w.eta * m.accuracy - w.mu * m.ece + w.beta * m.ape - w.lam * m.latency_ms


@dataclass(frozen=True)
class CandidateRecord:
    genome: Genome
    metrics: EvalMetrics
    aim: float
    generation: int = 0


@dataclass(frozen=True)
class EaParams:
    population_size: int = 16
    generations: int = 10
    parent_count: int = 8
    mutation_prob: float = 0.2
    mutation_fraction: float = 0.5
    seed: int = 0

    def validate(self):
        p, k = self.population_size, self.parent_count
        if p < 1 or not 1 <= k <= p or self.generations < 1:
            raise ConfigError(f"invalid EA sizes: population {p}, parents {k}, generations {self.generations}")
        if not 0 <= self.mutation_prob <= 1 or not 0 <= self.mutation_fraction <= 1:
            raise ConfigError("mutation probability and fraction must lie in [0, 1]")


def _sizes(space) -> tuple[int, ...]:
    return tuple(space.sizes) if hasattr(space, "sizes") else tuple(int(m) for m in space)


def init_population(space, size: int, rng: np.random.Generator) -> list[Genome]:
    """``size`` pairwise-distinct genomes drawn by rejection from uniform sampling."""
    sizes = _sizes(space)
    total = math.prod(sizes)
    if size > total:
        raise ConfigError(f"population of {size} exceeds search space of {total} genomes")
    seen: set[Genome] = set()
    pop = []
    while len(pop) < size:
        g = sample_uniform(sizes, rng)
        if g not in seen:
            seen.add(g)
            pop.append(g)
    return pop


def _rank_key(r: CandidateRecord):
    return (-r.aim, r.genome)


def select_parents(records: Sequence[CandidateRecord], k: int) -> list[CandidateRecord]:
    """Top ``k`` records by aim; equal aims prefer the lexicographically smaller genome."""
    if k > len(records):
        raise ConfigError(f"cannot select {k} parents from {len(records)} records")
    return sorted(records, key=_rank_key)[:k]


def crossover(a: Sequence[int], b: Sequence[int], rng: np.random.Generator) -> Genome:
    """Uniform crossover: each slot comes from ``a`` or ``b`` with probability 1/2."""
    if len(a) != len(b):
        raise GenomeError(f"cannot cross genomes of length {len(a)} and {len(b)}")
    take_a = rng.random(len(a)) < 0.5
    return tuple(int(x if pick else y) for x, y, pick in zip(a, b, take_a))


def mutate(g: Sequence[int], space, prob: float, rng: np.random.Generator) -> Genome:
    """Resample each slot uniformly with probability ``prob``."""
    if not 0 <= prob <= 1:
        raise ConfigError(f"mutation probability must lie in [0, 1], got {prob}")
    sizes = _sizes(space)
    hit = rng.random(len(g)) < prob
    fresh = [int(rng.integers(m)) for m in sizes]
    return tuple(f if h else int(c) for c, f, h in zip(g, fresh, hit))


def dominates(a: EvalMetrics, b: EvalMetrics) -> bool:
    """True if ``a`` is no worse than ``b`` on every objective and better on one."""
    no_worse = (
        a.accuracy >= b.accuracy
        and a.ece <= b.ece
        and a.ape >= b.ape
        and a.latency_ms <= b.latency_ms
    )
    better = (
        a.accuracy > b.accuracy or a.ece < b.ece or a.ape > b.ape or a.latency_ms < b.latency_ms
    )
    return no_worse and better


def pareto_front(records: Sequence[CandidateRecord]) -> list[CandidateRecord]:
    """Non-dominated records under (accuracy up, ECE down, aPE up, latency down)."""
    return [
        r for r in records if not any(dominates(o.metrics, r.metrics) for o in records if o is not r)
    ]


class CachedEvaluator:
    """Memoise a ``genome -> EvalMetrics`` callable."""

    def __init__(self, fn: Callable[[Genome], EvalMetrics]):
        self.fn = fn
        self.cache: dict[Genome, EvalMetrics] = {}

    def __call__(self, genome: Genome) -> EvalMetrics:
        genome = tuple(genome)
        if genome not in self.cache:
            try:
                self.cache[genome] = self.fn(genome)
            except EvaluationError:
                raise
            except Exception as exc:
                raise EvaluationError(genome, exc) from exc
        return self.cache[genome]


@dataclass
class SearchResult:
    best: CandidateRecord
    history: list[CandidateRecord]
    pareto: list[CandidateRecord]
    best_per_generation: list[float]


def _breed(parents, sizes, ea, rng, evaluated, n_children):
    taken = {p.genome for p in parents}
    n_mut = round(ea.mutation_fraction * n_children)
    children = []
    for j in range(n_children):
        child = None
        for _ in range(MAX_CHILD_ATTEMPTS):
            if j < n_mut:
                child = mutate(parents[j % len(parents)].genome, sizes, ea.mutation_prob, rng)
            else:
                if len(parents) > 1:
                    ia, ib = rng.choice(len(parents), size=2, replace=False)
                else:
                    ia = ib = 0
                child = crossover(parents[ia].genome, parents[ib].genome, rng)
            if child not in taken and child not in evaluated:
                break
        else:
            # operators keep reproducing known genomes: top up with a novel random one
            for _ in range(MAX_FILL_ATTEMPTS):
                g = sample_uniform(sizes, rng)
                if g not in taken and g not in evaluated:
                    child = g
                    break
        taken.add(child)
        children.append(child)
    return children


def search(
    space,
    evaluate: Callable[[Genome], EvalMetrics],
    weights: AimWeights,
    ea: EaParams = EaParams(),
) -> SearchResult:
    """Run the evolutionary loop and return the best record, history and Pareto set.

    ``evaluate`` maps a genome to its metrics; results are cached per genome so
    every distinct genome is evaluated once.  Children that duplicate an
    already evaluated genome are redrawn a bounded number of times.
    """
    ea.validate()
    sizes = _sizes(space)
    rng = np.random.default_rng(ea.seed)
    evaluator = evaluate if isinstance(evaluate, CachedEvaluator) else CachedEvaluator(evaluate)
    population = init_population(sizes, min(ea.population_size, math.prod(sizes)), rng)
    records: dict[Genome, CandidateRecord] = {}
    history: list[CandidateRecord] = []
    best_trace = []
    for gen in range(ea.generations):
        current = []
        for g in dict.fromkeys(population):
            if g not in records:
                m = evaluator(g)
                rec = CandidateRecord(g, m, aim_score(m, weights), gen)
                records[g] = rec
                history.append(rec)
            current.append(records[g])
        best_trace.append(max(r.aim for r in history))
        parents = select_parents(current, min(ea.parent_count, len(current)))
        log.debug("generation %d: %d evaluated, best aim %.4f", gen, len(history), best_trace[-1])
        if gen == ea.generations - 1:
            break
        children = _breed(parents, sizes, ea, rng, records, ea.population_size - len(parents))
        population = [p.genome for p in parents] + children
    best = min(history, key=_rank_key)
    return SearchResult(best, history, pareto_front(history), best_trace)


def exhaustive(space, evaluate: Callable[[Genome], EvalMetrics], weights: AimWeights) -> list[CandidateRecord]:
    """Evaluate every genome of an enumerable space, in lexicographic order."""
    sizes = _sizes(space)
    out = []
    for idx in np.ndindex(*sizes):
        g = tuple(int(i) for i in idx)
        m = evaluate(g)
        out.append(CandidateRecord(g, m, aim_score(m, weights)))
    return out


def best_of(records: Iterable[CandidateRecord]) -> CandidateRecord:
    return min(records, key=_rank_key)
