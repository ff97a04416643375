"""Individuals, objective vectors and Pareto dominance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .cost_model import CostReport
from .search_space import Genotype, serialize

OBJECTIVES = ("error", "flops", "params")


@dataclass(frozen=True)
class ObjectiveVector:
    """Minimised objectives: error fraction, MFLOPs (MACs) and Mparams."""

    error: float
    flops: float
    params: float

    def __post_init__(self):
        for name in OBJECTIVES:
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"objective {name} must be finite and >= 0, got {v}")
        if self.error > 1:
            raise ValueError(f"error must be <= 1, got {self.error}")

    def as_tuple(self):
        return (self.error, self.flops, self.params)

    def __iter__(self):
        return iter(self.as_tuple())

    def __getitem__(self, i):
        return self.as_tuple()[i]

    def __len__(self):
        return 3


@dataclass(frozen=True)
class ObjectiveWeights:
    error: float = 1 / 3
    flops: float = 1 / 3
    params: float = 1 / 3

    def __post_init__(self):
        ws = self.as_tuple()
        if any(w < 0 for w in ws):
            raise ValueError(f"weights must be non-negative, got {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(ws)!r}")

    def as_tuple(self):
        return (self.error, self.flops, self.params)


@dataclass
class Individual:
    genotype: Genotype
    objectives: Optional[ObjectiveVector] = None
    cost: Optional[CostReport] = None
    rank: int = -1
    crowding: float = 0.0
    key: str = field(init=False)

    def __post_init__(self):
        self.key = serialize(self.genotype)

    @property
    def evaluated(self) -> bool:
        return self.objectives is not None


@dataclass
class Population:
    members: List[Individual]
    generation: int = 1

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


class UnevaluatedError(ValueError):
    """An operation needed objectives from an individual that has none."""


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and better somewhere."""
    strictly = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            strictly = True
    return strictly


def non_dominated_fronts(points: Sequence[Sequence[float]]) -> List[List[int]]:
    """Fast non-dominated sort over raw points, returning index fronts.

    Indices inside each front are in ascending order.
    """
    n = len(points)
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    for p in range(n):
        for q in range(p + 1, n):
            if dominates(points[p], points[q]):
                dominated_by[p].append(q)
                counts[q] += 1
            elif dominates(points[q], points[p]):
                dominated_by[q].append(p)
                counts[p] += 1
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for p in current:
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(q)
        current = sorted(nxt)
    return fronts
