"""NSGA-II style multi-objective search with weighted crowding distance.

One search is a state machine: the evaluated parent population ``P_i`` plus
unevaluated offspring ``Q_i``.  :func:`run_generation` merges them, keeps the
best ``n`` by front rank and weighted crowding, breeds the next offspring
from tournament winners and emits a :class:`GenerationRecord`.

Every offspring draws from its own stream keyed by (seed, generation,
member index), so results do not depend on how evaluations are scheduled.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cost_model import MacroConfig, architecture_cost
from .eepi import (
    STREAM_OFFSPRING,
    BudgetInfeasibleError,
    EarlyExitConfig,
    derive_rng,
    early_exit,
    initialize_population,
)
from .evaluators import EvaluationError, Evaluator, objectives_from
from .metrics import hypervolume, nadir_from_first_generation, normalized_hypervolume, pareto_indices
from .population import (
    Individual,
    ObjectiveVector,
    ObjectiveWeights,
    Population,
    UnevaluatedError,
    dominates,
    non_dominated_fronts,
)
from .search_space import (
    GENES_PER_CELL,
    NB201_NUM_OPS,
    Cell,
    CellGenotype,
    Gene,
    Genotype,
    NB201Genotype,
    SearchSpace,
    random_gene,
)

log = logging.getLogger(__name__)

INF = math.inf


class EvaluatorFailure(RuntimeError):
    """An evaluator error under the ``abort`` failure policy."""


# -- ranking ------------------------------------------------------------------


def _objectives(ind: Individual) -> Tuple[float, float, float]:
    if ind.objectives is None:
        raise UnevaluatedError(f"individual {ind.key} has no objectives")
    return ind.objectives.as_tuple()


def non_dominated_sort(pop: Sequence[Individual]) -> List[List[Individual]]:
    """Partition ``pop`` into Pareto fronts and set each member's ``rank``."""
    points = [_objectives(ind) for ind in pop]
    fronts = []
    for rank, idx in enumerate(non_dominated_fronts(points)):
        front = [pop[i] for i in idx]
        for ind in front:
            ind.rank = rank
        fronts.append(front)
    return fronts


def crowding_distance(
    front: Sequence[Individual], weights: ObjectiveWeights = ObjectiveWeights()
) -> List[float]:
    """Weighted crowding distance of each member of one front.

    Objectives with zero weight are ignored.  The values are also stored on
    the individuals.
    """
    n = len(front)
    if n == 0:
        raise ValueError("crowding distance of an empty front")
    points = [_objectives(ind) for ind in front]
    dist = [0.0] * n
    for m, w in enumerate(weights.as_tuple()):
        if w == 0:
            continue
        order = sorted(range(n), key=lambda i: points[i][m])
        dist[order[0]] = dist[order[-1]] = INF
        lo, hi = points[order[0]][m], points[order[-1]][m]
        if hi == lo:
            continue
        for k in range(1, n - 1):
            i = order[k]
            if dist[i] != INF:
                dist[i] += w * (points[order[k + 1]][m] - points[order[k - 1]][m]) / (hi - lo)
    for ind, d in zip(front, dist):
        ind.crowding = d
    return dist


def rank_population(pop: Sequence[Individual], weights: ObjectiveWeights):
    fronts = non_dominated_sort(pop)
    for front in fronts:
        crowding_distance(front, weights)
    return fronts


def select_survivors(
    pool: Sequence[Individual], n: int, weights: ObjectiveWeights
) -> List[Individual]:
    """Fill ``n`` slots front by front; the last admitted front is cut by crowding."""
    survivors: List[Individual] = []
    for front in rank_population(pool, weights):
        if len(survivors) + len(front) <= n:
            survivors.extend(front)
            if len(survivors) == n:
                break
            continue
        # stable sort keeps index order among equal distances
        by_crowding = sorted(front, key=lambda ind: -ind.crowding)
        survivors.extend(by_crowding[: n - len(survivors)])
        break
    return survivors


def tournament_select(
    pop: Sequence[Individual], rng: np.random.Generator, tournament_size: int = 2
) -> Individual:
    """Lowest rank wins, then larger crowding, then lower population index."""
    if not pop:
        raise ValueError("tournament over an empty population")
    picks = [int(i) for i in rng.integers(len(pop), size=tournament_size)]
    best = min(picks, key=lambda i: (pop[i].rank, -pop[i].crowding, i))
    return pop[best]


# -- variation --------------------------------------------------------------


def recombine_cells(c1: Cell, c2: Cell, picks) -> Cell:
    """Build a child cell from two parents.

    ``picks`` has one entry per gene position: ``1`` or ``2`` copies that
    parent's whole gene, an ``(op_parent, index_parent)`` pair takes the
    operation and the connection index from the named parents.
    """
    if len(picks) != GENES_PER_CELL:
        raise ValueError(f"expected {GENES_PER_CELL} picks, got {len(picks)}")
    genes = []
    for g1, g2, pick in zip(c1.genes, c2.genes, picks):
        op_from, idx_from = (pick, pick) if isinstance(pick, int) else pick
        op = (g1 if op_from == 1 else g2).op
        index = (g1 if idx_from == 1 else g2).index
        genes.append(Gene(op, index))
    return Cell(tuple(genes))


def crossover(
    p1: Genotype, p2: Genotype, rng: np.random.Generator, keep_prob: float = 0.5
) -> Genotype:
    """Uniform crossover.

    Each gene's operation and connection index are inherited independently,
    from ``p1`` with probability ``keep_prob``.  Both parents hold the same
    position's index set, so the child is always valid.
    """
    if type(p1) is not type(p2):
        raise TypeError(
            f"cannot cross genotypes from different spaces: {type(p1).__name__} "
            f"and {type(p2).__name__}"
        )
    if isinstance(p1, NB201Genotype):
        coins = rng.random(len(p1.ops)) < keep_prob
        return NB201Genotype(tuple(a if c else b for a, b, c in zip(p1.ops, p2.ops, coins)))
    cells = []
    for c1, c2 in zip(p1.cells, p2.cells):
        coins = rng.random((GENES_PER_CELL, 2)) < keep_prob
        picks = [(1 if op else 2, 1 if idx else 2) for op, idx in coins]
        cells.append(recombine_cells(c1, c2, picks))
    return CellGenotype(*cells)


def mutate_at(g: Genotype, position: int, replacement) -> Genotype:
    """Replace one gene position.

    Cell-based positions 0-7 address the normal cell and 8-15 the reduction
    cell; ``replacement`` is a :class:`Gene` or ``(op, index)``.  For
    NAS-Bench-201 the position is the edge and ``replacement`` an op id.
    """
    if isinstance(g, NB201Genotype):
        ops = list(g.ops)
        ops[position] = int(replacement)
        return NB201Genotype(tuple(ops))
    gene = replacement if isinstance(replacement, Gene) else Gene(*replacement)
    cell_no, pos = divmod(position, GENES_PER_CELL)
    cells = list(g.cells)
    genes = list(cells[cell_no].genes)
    genes[pos] = gene
    cells[cell_no] = Cell(tuple(genes))
    return CellGenotype(*cells)


def mutate(g: Genotype, rng: np.random.Generator, mutation_prob: float = 0.1) -> Genotype:
    """With probability ``mutation_prob`` resample one gene position."""
    if rng.random() >= mutation_prob:
        return g
    if isinstance(g, NB201Genotype):
        return mutate_at(g, int(rng.integers(len(g.ops))), int(rng.integers(NB201_NUM_OPS)))
    position = int(rng.integers(2 * GENES_PER_CELL))
    return mutate_at(g, position, random_gene(rng, position % GENES_PER_CELL))


# -- final selection ----------------------------------------------------------


def select_k_pareto(
    front: Sequence[Individual], k: int, weights: ObjectiveWeights = ObjectiveWeights()
) -> List[Individual]:
    """Pick ``k`` members evenly spaced along the front ordered by error.

    Both extremes are always included; ``k = 1`` returns the member with the
    smallest weighted sum of min-max normalised objectives.
    """
    if not front:
        raise ValueError("cannot select from an empty front")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ordered = sorted(front, key=lambda ind: _objectives(ind)[0])
    m = len(ordered)
    if k >= m:
        return list(ordered)
    if k == 1:
        points = [_objectives(ind) for ind in front]
        lo = [min(c) for c in zip(*points)]
        hi = [max(c) for c in zip(*points)]
        scores = [
            sum(
                w * ((x - a) / (b - a) if b > a else 0.0)
                for w, x, a, b in zip(weights.as_tuple(), p, lo, hi)
            )
            for p in points
        ]
        return [front[int(np.argmin(scores))]]
    positions = [int(math.floor(i * (m - 1) / (k - 1) + 0.5)) for i in range(k)]
    return [ordered[p] for p in positions]


# -- evaluation ---------------------------------------------------------------


class EvaluationService:
    """Evaluates individuals through an :class:`Evaluator` with a genotype cache.

    ``failure_policy`` is ``"abort"`` (raise :class:`EvaluatorFailure`) or
    ``"worst"`` (error 1.0 with cost-model FLOPs and params).
    """

    def __init__(
        self,
        evaluator: Evaluator,
        macro: MacroConfig,
        workers: int = 1,
        failure_policy: str = "abort",
    ):
        if failure_policy not in ("abort", "worst"):
            raise ValueError(f"unknown failure policy {failure_policy!r}")
        self.evaluator = evaluator
        self.macro = macro
        self.workers = workers
        self.failure_policy = failure_policy
        self.cache: Dict[str, ObjectiveVector] = {}
        self.cost_units: Dict[str, float] = {}
        self.evals_used = 0
        self.failures = 0

    def _run_one(self, ind: Individual, request_id: int):
        try:
            return self.evaluator.evaluate(ind.genotype, request_id), None
        except EvaluationError as exc:
            return None, exc

    def evaluate(self, individuals: Sequence[Individual]) -> None:
        pending: List[Individual] = []
        seen = set()
        for ind in individuals:
            if ind.cost is None:
                ind.cost = architecture_cost(ind.genotype, self.macro)
            if ind.key not in self.cache and ind.key not in seen:
                seen.add(ind.key)
                pending.append(ind)

        first_id = self.evals_used
        ids = range(first_id, first_id + len(pending))
        if self.workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                outcomes = list(pool.map(self._run_one, pending, ids))
        else:
            outcomes = [self._run_one(ind, i) for ind, i in zip(pending, ids)]
        self.evals_used += len(pending)

        for ind, (result, exc) in zip(pending, outcomes):
            if exc is not None:
                if self.failure_policy == "abort":
                    raise EvaluatorFailure(f"evaluating {ind.key}: {exc}") from exc
                self.failures += 1
                log.warning("evaluation of %s failed (%s); assigning worst error", ind.key, exc)
                self.cache[ind.key] = ObjectiveVector(1.0, ind.cost.flops, ind.cost.params)
                self.cost_units[ind.key] = 0.0
                continue
            self.cache[ind.key] = ObjectiveVector(*objectives_from(result, ind.cost))
            self.cost_units[ind.key] = result.cost_units

        for ind in individuals:
            ind.objectives = self.cache[ind.key]


# -- generational loop --------------------------------------------------------


@dataclass
class EvolutionConfig:
    generations: int = 30
    population: int = 40
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    tournament_size: int = 2
    mutation_prob: float = 0.1
    crossover_keep_prob: float = 0.5
    seed: int = 0
    space: SearchSpace = SearchSpace.CELL_BASED
    early_exit: EarlyExitConfig = field(default_factory=EarlyExitConfig)
    k_final: int = 5

    def __post_init__(self):
        self.space = SearchSpace(self.space)
        for name in ("generations", "population", "tournament_size", "k_final"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("mutation_prob", "crossover_keep_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)}")


@dataclass
class GenerationRecord:
    generation: int
    front0: List[str]
    front0_objectives: List[List[float]]
    archive: List[List[float]]
    nadir: List[float]
    hv: float
    normalized_hv: float
    best_error: float
    mean_params: float
    evals_used: int
    population: List[List[float]]

    def to_json(self) -> str:
        d = {
            "generation": self.generation,
            "front0": self.front0,
            "hv": self.hv,
            "normalized_hv": self.normalized_hv,
            "best_error": self.best_error,
            "mean_params": self.mean_params,
            "evals_used": self.evals_used,
            "front0_objectives": self.front0_objectives,
            "archive": self.archive,
            "nadir": self.nadir,
            "population": self.population,
        }
        return json.dumps(d)


@dataclass
class SearchState:
    generation: int
    population: List[Individual]
    offspring: List[Individual]
    nadir: Tuple[float, ...]
    archive: List[Tuple[str, ObjectiveVector]] = field(default_factory=list)


def _update_archive(archive, individuals):
    """Merge evaluated individuals into the non-dominated archive (one entry per genotype)."""
    entries = list(archive)
    known = {key for key, _ in entries}
    for ind in individuals:
        if ind.key not in known:
            known.add(ind.key)
            entries.append((ind.key, ind.objectives))
    keep = pareto_indices([obj.as_tuple() for _, obj in entries])
    return [entries[i] for i in keep]


def make_offspring(
    parents: Sequence[Individual], generation: int, config: EvolutionConfig
) -> List[Individual]:
    """``n // 2`` crossover children, the rest mutants of tournament winners."""
    n = config.population
    n_cross = n // 2
    children = []
    for j in range(n):
        rng = derive_rng(config.seed, STREAM_OFFSPRING, generation, j)
        for attempt in range(config.early_exit.max_attempts_per_slot):
            if j < n_cross:
                a = tournament_select(parents, rng, config.tournament_size)
                b = tournament_select(parents, rng, config.tournament_size)
                child = crossover(a.genotype, b.genotype, rng, config.crossover_keep_prob)
            else:
                a = tournament_select(parents, rng, config.tournament_size)
                child = mutate(a.genotype, rng, config.mutation_prob)
            ind = Individual(child, cost=architecture_cost(child, config.early_exit.macro))
            if not config.early_exit.strict_offspring_filter or early_exit(
                ind.cost.params, config.early_exit.beta
            ):
                break
        else:
            raise BudgetInfeasibleError(
                config.early_exit.beta, config.early_exit.max_attempts_per_slot, ind.cost.params
            )
        children.append(ind)
    return children


def _record(state: SearchState, service: EvaluationService) -> GenerationRecord:
    pop = state.population
    front0 = [ind for ind in pop if ind.rank == 0]
    archive_pts = [obj.as_tuple() for _, obj in state.archive]
    return GenerationRecord(
        generation=state.generation,
        front0=[ind.key for ind in front0],
        front0_objectives=[list(ind.objectives.as_tuple()) for ind in front0],
        archive=[list(p) for p in archive_pts],
        nadir=list(state.nadir),
        hv=hypervolume(archive_pts, state.nadir),
        normalized_hv=normalized_hypervolume(archive_pts, state.nadir),
        best_error=min(ind.objectives.error for ind in pop),
        mean_params=sum(ind.objectives.params for ind in pop) / len(pop),
        evals_used=service.evals_used,
        population=[list(ind.objectives.as_tuple()) for ind in pop],
    )


def initialize_search(
    config: EvolutionConfig, service: EvaluationService
) -> Tuple[SearchState, GenerationRecord]:
    """Early-exit initialisation, evaluation of ``P_1`` and breeding of ``Q_1``."""
    init = initialize_population(config.population, config.early_exit, config.seed, config.space)
    pop = init.members
    service.evaluate(pop)
    rank_population(pop, config.weights)
    state = SearchState(
        generation=1,
        population=pop,
        offspring=make_offspring(pop, 1, config),
        nadir=nadir_from_first_generation(pop),
        archive=_update_archive([], pop),
    )
    return state, _record(state, service)


def run_generation(
    state: SearchState, service: EvaluationService, config: EvolutionConfig
) -> Tuple[SearchState, GenerationRecord]:
    """Advance one generation: ``P_{i+1}`` from ``P_i ∪ Q_i``, then breed ``Q_{i+1}``."""
    service.evaluate(state.offspring)
    pool = list(state.population) + list(state.offspring)
    survivors = select_survivors(pool, config.population, config.weights)
    generation = state.generation + 1
    new_state = SearchState(
        generation=generation,
        population=survivors,
        offspring=make_offspring(survivors, generation, config),
        nadir=state.nadir,
        archive=_update_archive(state.archive, state.offspring),
    )
    return new_state, _record(new_state, service)


@dataclass
class SearchResult:
    records: List[GenerationRecord]
    final_population: Population
    pareto: List[Individual]
    selected: List[Individual]
    evals_used: int
    generation1_cost_units: float


def run_search(config: EvolutionConfig, service: EvaluationService, on_record=None) -> SearchResult:
    """Run the full search for ``config.generations`` generations.

    Generation 1 is the early-exit population; generations 2..G are evolved.
    ``on_record`` is called with each :class:`GenerationRecord` as it is made.
    """
    state, record = initialize_search(config, service)
    gen1_cost = sum(service.cost_units.get(ind.key, 0.0) for ind in state.population)
    records = [record]
    if on_record:
        on_record(record)
    while state.generation < config.generations:
        state, record = run_generation(state, service, config)
        records.append(record)
        if on_record:
            on_record(record)
    pareto = [ind for ind in state.population if ind.rank == 0]
    return SearchResult(
        records=records,
        final_population=Population(state.population, state.generation),
        pareto=pareto,
        selected=select_k_pareto(pareto, config.k_final, config.weights),
        evals_used=service.evals_used,
        generation1_cost_units=gen1_cost,
    )

