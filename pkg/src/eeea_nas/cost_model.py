"""Analytic parameter and FLOP counts for decoded architectures.

FLOPs are multiply-accumulates.  Batch-norm and activations cost no FLOPs,
but batch-norm affine parameters (gamma, beta) are counted as parameters.

Cell-based networks stack ``total_cells`` cells.  The working channel count
doubles and the spatial size halves at each reduction position.  Every cell
projects its two inputs (outputs of the two preceding cells, or the stem)
to the working width with 1x1 convolutions, applies the eight gene ops and
concatenates its four block outputs, so a cell emits ``4 * C`` channels.

NAS-Bench-201 networks use the same macro fields: the layers at the
reduction positions are residual downsampling blocks and every other layer
is a 6-edge cell of width ``C`` (``total_cells=17, init_channels=16`` is the
benchmark's CIFAR network).
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from typing import List, Tuple

from .search_space import (
    CellGenotype,
    Genotype,
    NB201Genotype,
    NB201Operation,
    Operation,
    SearchSpace,
    check,
)

DEFAULT_EXPANSION = 6
DEFAULT_NUM_CLASSES = 10


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class MacroConfig:
    total_cells: int = 8
    init_channels: int = 32
    input_resolution: int = 32
    inv_res_expansion: int = DEFAULT_EXPANSION
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        if self.total_cells < 3:
            raise ConfigurationError(f"total_cells must be >= 3, got {self.total_cells}")
        if self.init_channels < 1:
            raise ConfigurationError(f"init_channels must be >= 1, got {self.init_channels}")
        if self.input_resolution < 8:
            raise ConfigurationError(
                f"input_resolution must be >= 8, got {self.input_resolution}"
            )
        if self.inv_res_expansion < 1:
            raise ConfigurationError(
                f"inv_res_expansion must be >= 1, got {self.inv_res_expansion}"
            )
        if self.num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {self.num_classes}")

    @property
    def reduction_positions(self) -> frozenset:
        return frozenset({self.total_cells // 3, 2 * self.total_cells // 3})


NB201_MACRO = MacroConfig(total_cells=17, init_channels=16, input_resolution=32)


@dataclass
class CostReport:
    """Integer parameter and MAC counts; ``params``/``flops`` are in millions."""

    params_count: int
    flops_count: int
    per_cell: List[Tuple[int, int, int]] = field(default_factory=list)
    stem: Tuple[int, int] = (0, 0)
    head: Tuple[int, int] = (0, 0)

    @property
    def params(self) -> float:
        return self.params_count / 1e6

    @property
    def flops(self) -> float:
        return self.flops_count / 1e6

    def to_dict(self) -> dict:
        return {
            "params_m": self.params,
            "flops_m": self.flops,
            "params": self.params_count,
            "flops": self.flops_count,
            "stem": {"params": self.stem[0], "flops": self.stem[1]},
            "head": {"params": self.head[0], "flops": self.head[1]},
            "per_cell": [
                {"cell": i, "params": p, "flops": f} for i, p, f in self.per_cell
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _kernel(kind: str) -> int:
    return int(kind.rsplit("_", 1)[1].split("x")[0])


@functools.lru_cache(maxsize=4096)
def _weight_params(kind: str, c: int, expansion: int) -> Tuple[int, int]:
    """(conv/linear weights, batch-norm params) of one op at width ``c``."""
    if kind in ("skip_connect", "none") or kind.endswith("pool_3x3"):
        return 0, 0
    if kind.startswith(("sep_conv", "dil_conv")):
        k = _kernel(kind)
        return c * k * k + c * c, 2 * c
    if kind.startswith("inv_res"):
        k = _kernel(kind)
        mid = expansion * c
        return c * mid + mid * k * k + mid * c, 2 * (c + mid + mid)
    if kind.startswith("nor_conv"):
        k = _kernel(kind)
        return k * k * c * c, 2 * c
    raise ValueError(f"unknown operation {kind!r}")


_CELL_KINDS = tuple(op.kind for op in Operation)
_NB201_KINDS = tuple(op.kind for op in NB201Operation)


def _kind(op) -> str:
    if isinstance(op, NB201Operation):
        return _NB201_KINDS[op]
    if isinstance(op, int):
        return _CELL_KINDS[op]
    return str(op)


def op_params(op, channels: int, expansion: int = DEFAULT_EXPANSION) -> int:
    """Parameter count of one op applied at width ``channels``."""
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    w, bn = _weight_params(_kind(op), channels, expansion)
    return w + bn


def op_flops(op, channels: int, spatial: int, expansion: int = DEFAULT_EXPANSION) -> int:
    """MACs of one op producing a ``spatial x spatial`` map."""
    if spatial < 1:
        raise ValueError(f"spatial must be >= 1, got {spatial}")
    kind = _kind(op)
    if kind.endswith("pool_3x3"):
        return 9 * channels * spatial * spatial
    w, _ = _weight_params(kind, channels, expansion)
    return w * spatial * spatial


@functools.lru_cache(maxsize=4096)
def _edge_cost(kind: str, c: int, spatial: int, expansion: int) -> Tuple[int, int]:
    return op_params(kind, c, expansion), op_flops(kind, c, spatial, expansion)


def _halve(spatial: int) -> int:
    return (spatial + 1) // 2


def _cell_based_cost(genotype: CellGenotype, macro: MacroConfig) -> CostReport:
    t = macro.inv_res_expansion
    c = macro.init_channels
    res = macro.input_resolution

    stem = (27 * c + 2 * c, 27 * c * res * res)
    ch_pp, ch_p, spatial = c, c, res
    per_cell = []
    reductions = macro.reduction_positions
    for i in range(macro.total_cells):
        reduction = i in reductions
        if reduction:
            c *= 2
            cell_spatial = _halve(spatial)
        else:
            cell_spatial = spatial
        cell = genotype.reduction if reduction else genotype.normal
        # 1x1 projections of both inputs, evaluated at the previous cell's size
        params = ch_pp * c + 2 * c + ch_p * c + 2 * c
        flops = (ch_pp + ch_p) * c * spatial * spatial
        for gene in cell.genes:
            p, f = _edge_cost(_CELL_KINDS[gene.op], c, cell_spatial, t)
            params += p
            flops += f
        per_cell.append((i, params, flops))
        ch_pp, ch_p, spatial = ch_p, 4 * c, cell_spatial

    head = (ch_p * macro.num_classes + macro.num_classes, ch_p * macro.num_classes)
    return CostReport(
        params_count=stem[0] + sum(p for _, p, _ in per_cell) + head[0],
        flops_count=stem[1] + sum(f for _, _, f in per_cell) + head[1],
        per_cell=per_cell,
        stem=stem,
        head=head,
    )


def _nb201_cost(genotype: NB201Genotype, macro: MacroConfig) -> CostReport:
    c = macro.init_channels
    spatial = macro.input_resolution
    stem = (27 * c + 2 * c, 27 * c * spatial * spatial)
    per_cell = []
    cell_costs = {}
    reductions = macro.reduction_positions
    for i in range(macro.total_cells):
        if i in reductions:
            c_in, c = c, 2 * c
            spatial = _halve(spatial)
            s2 = spatial * spatial
            # 3x3 stride-2 conv, 3x3 conv (each with BN), shortcut 2x2 avg-pool + 1x1 conv
            params = 9 * c_in * c + 2 * c + 9 * c * c + 2 * c + c_in * c
            flops = (9 * c_in * c + 9 * c * c + c_in * c) * s2 + 4 * c_in * s2
        else:
            if (c, spatial) not in cell_costs:
                edges = [_edge_cost(_NB201_KINDS[o], c, spatial, 1) for o in genotype.ops]
                cell_costs[c, spatial] = (sum(p for p, _ in edges), sum(f for _, f in edges))
            params, flops = cell_costs[c, spatial]
        per_cell.append((i, params, flops))
    # final BN before pooling, then the classifier
    head = (2 * c + c * macro.num_classes + macro.num_classes, c * macro.num_classes)
    return CostReport(
        params_count=stem[0] + sum(p for _, p, _ in per_cell) + head[0],
        flops_count=stem[1] + sum(f for _, _, f in per_cell) + head[1],
        per_cell=per_cell,
        stem=stem,
        head=head,
    )


def architecture_cost(genotype: Genotype, macro: MacroConfig = MacroConfig()) -> CostReport:
    if not isinstance(macro, MacroConfig):
        raise ConfigurationError(f"not a MacroConfig: {macro!r}")
    check(genotype)
    if isinstance(genotype, NB201Genotype):
        return _nb201_cost(genotype, macro)
    return _cell_based_cost(genotype, macro)


def default_macro(space) -> MacroConfig:
    return NB201_MACRO if SearchSpace(space) is SearchSpace.NB201 else MacroConfig()
