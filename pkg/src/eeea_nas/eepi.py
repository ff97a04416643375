"""Early-exit population initialisation.

The first generation is filled by rejection sampling: each slot draws
random genotypes until one has at most ``beta`` million parameters.
``beta = 0`` disables the filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost_model import MacroConfig, architecture_cost
from .population import Individual, Population
from .search_space import SearchSpace, random_genotype

DEFAULT_MAX_ATTEMPTS = 10_000

# Tags keeping the initialisation and offspring RNG streams disjoint.
STREAM_INIT = 0
STREAM_OFFSPRING = 1


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one (seed, keys...) coordinate."""
    return np.random.default_rng([int(seed) & (2**64 - 1), *keys])


class BudgetInfeasibleError(RuntimeError):
    def __init__(self, beta: float, attempts: int, min_params: float):
        super().__init__(
            f"no genotype with params <= {beta}M after {attempts} attempts "
            f"(smallest seen {min_params:.6f}M); beta is probably below the "
            "search space's parameter floor"
        )
        self.beta = beta
        self.attempts = attempts
        self.min_params = min_params


@dataclass(frozen=True)
class EarlyExitConfig:
    beta: float = 0.0
    max_attempts_per_slot: int = DEFAULT_MAX_ATTEMPTS
    macro: MacroConfig = field(default_factory=MacroConfig)
    strict_offspring_filter: bool = False

    def __post_init__(self):
        if not self.beta >= 0 or math.isinf(self.beta):
            raise ValueError(f"beta must be a finite value >= 0, got {self.beta}")
        if self.max_attempts_per_slot < 1:
            raise ValueError(
                f"max_attempts_per_slot must be >= 1, got {self.max_attempts_per_slot}"
            )

    @property
    def enabled(self) -> bool:
        return self.beta > 0


def early_exit(alpha: float, beta: float) -> int:
    """1 if a model of ``alpha`` Mparams is admitted under budget ``beta``, else 0."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if beta == 0:
        return 1
    return 1 if alpha <= beta else 0


def sample_within_budget(rng, cfg: EarlyExitConfig, space=SearchSpace.CELL_BASED):
    """Draw genotypes from ``rng`` until one passes ``early_exit``.

    Returns ``(genotype, cost_report, attempts)``.
    """
    min_seen = math.inf
    for attempt in range(1, cfg.max_attempts_per_slot + 1):
        genotype = random_genotype(rng, space)
        cost = architecture_cost(genotype, cfg.macro)
        if early_exit(cost.params, cfg.beta):
            return genotype, cost, attempt
        min_seen = min(min_seen, cost.params)
    raise BudgetInfeasibleError(cfg.beta, cfg.max_attempts_per_slot, min_seen)


def initialize_population(
    n: int, cfg: EarlyExitConfig, seed: int, space=SearchSpace.CELL_BASED
) -> Population:
    """Generation-1 population with params/FLOPs costs attached.

    Slot ``i`` draws from its own stream ``derive_rng(seed, STREAM_INIT, i)``,
    so the result does not depend on the order slots are filled in.
    """
    if n < 1:
        raise ValueError(f"population size must be >= 1, got {n}")
    members = []
    for slot in range(n):
        rng = derive_rng(seed, STREAM_INIT, slot)
        genotype, cost, _ = sample_within_budget(rng, cfg, space)
        members.append(Individual(genotype, cost=cost))
    return Population(members, generation=1)
