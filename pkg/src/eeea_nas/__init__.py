"""Early-exit multi-objective evolutionary neural architecture search."""

from .cost_model import CostReport, MacroConfig, architecture_cost
from .eepi import EarlyExitConfig, early_exit, initialize_population
from .evolution import EvaluationService, EvolutionConfig, run_search
from .population import Individual, ObjectiveVector, ObjectiveWeights, dominates
from .search_space import (
    CellGenotype,
    NB201Genotype,
    SearchSpace,
    decode,
    parse,
    random_genotype,
    serialize,
    validate,
)

__version__ = "0.1.0"
