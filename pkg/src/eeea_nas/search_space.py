"""Genotype encodings for the cell-based space and the NAS-Bench-201 vector space.

A cell-based chromosome holds two cells (normal, reduction). Each cell is
four blocks A-D of two genes; a gene is an ``(op, index)`` pair written as
two digits, e.g. ``"61"`` is operation 6 reading connection index 1::

    40-30-61-31-00-60-42-13/40-30-21-61-22-72-53-11

Index 0 reads cell input X1, index 1 reads X2, and index ``i >= 2`` reads the
output of block ``i - 2``.  NAS-Bench-201 genotypes are six comma-separated
operation ids, one per edge of the standard 4-node cell.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np


class Operation(enum.IntEnum):
    MAX_POOL_3X3 = 0
    AVG_POOL_3X3 = 1
    SEP_CONV_3X3 = 2
    SEP_CONV_5X5 = 3
    DIL_CONV_3X3 = 4
    DIL_CONV_5X5 = 5
    INV_RES_3X3 = 6
    INV_RES_5X5 = 7
    SKIP_CONNECT = 8

    @property
    def kind(self) -> str:
        return self.name.lower()


class NB201Operation(enum.IntEnum):
    NONE = 0
    SKIP_CONNECT = 1
    NOR_CONV_1X1 = 2
    NOR_CONV_3X3 = 3
    AVG_POOL_3X3 = 4

    @property
    def kind(self) -> str:
        return self.name.lower()


NUM_OPS = len(Operation)
NB201_NUM_OPS = len(NB201Operation)
NB201_NUM_EDGES = 6
NB201_SPACE_SIZE = NB201_NUM_OPS ** NB201_NUM_EDGES

BLOCK_NAMES = ("A", "B", "C", "D")
GENES_PER_BLOCK = 2
GENES_PER_CELL = len(BLOCK_NAMES) * GENES_PER_BLOCK
# Allowed connection indices per block: A=[0], B=[0,1], C=[0,1,2], D=[0,1,2,3].
BLOCK_INDICES = tuple(tuple(range(b + 1)) for b in range(len(BLOCK_NAMES)))

# (source node, target node) of each NB201 edge, in vector order.
NB201_EDGES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))


class SearchSpace(str, enum.Enum):
    CELL_BASED = "cell_based"
    NB201 = "nb201"


class EncodingError(ValueError):
    """A genotype violates the encoding rules."""


class GenotypeParseError(ValueError):
    """Genotype text could not be parsed.

    ``position`` is the 0-based character offset of the offending token.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Gene:
    op: int
    index: int

    def __str__(self) -> str:
        return f"{self.op}{self.index}"


@dataclass(frozen=True)
class Cell:
    genes: Tuple[Gene, ...]

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(self.genes))

    @property
    def blocks(self) -> List[Tuple[Gene, Gene]]:
        return [
            (self.genes[2 * b], self.genes[2 * b + 1]) for b in range(len(BLOCK_NAMES))
        ]

    def __str__(self) -> str:
        return "-".join(str(g) for g in self.genes)


@dataclass(frozen=True)
class CellGenotype:
    normal: Cell
    reduction: Cell

    @property
    def space(self) -> SearchSpace:
        return SearchSpace.CELL_BASED

    @property
    def cells(self) -> Tuple[Cell, Cell]:
        return (self.normal, self.reduction)


@dataclass(frozen=True)
class NB201Genotype:
    ops: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(int(o) for o in self.ops))

    @property
    def space(self) -> SearchSpace:
        return SearchSpace.NB201


Genotype = Union[CellGenotype, NB201Genotype]


def block_of(position: int) -> int:
    """Block number (0=A .. 3=D) of a gene position within a cell."""
    return position // GENES_PER_BLOCK


def previous_index(index: int) -> int:
    """Block node read by a gene whose connection index is 2 or more."""
    if index < 2:
        raise ValueError(
            f"previous_index requires index >= 2, got {index}; "
            "indices 0 and 1 read the cell inputs"
        )
    return index - 2


def gene_source(gene: Gene) -> Tuple[str, int]:
    """Where a gene reads its input from.

    Returns ``("input", 0)`` for X1, ``("input", 1)`` for X2 and
    ``("block", j)`` for the output of block ``j``.
    """
    if gene.index < 2:
        return ("input", gene.index)
    return ("block", previous_index(gene.index))


# -- validation -------------------------------------------------------------


def _cell_violations(cell: Cell, label: str) -> List[str]:
    out = []
    if len(cell.genes) != GENES_PER_CELL:
        return [f"{label}: expected {GENES_PER_CELL} genes, got {len(cell.genes)}"]
    for pos, gene in enumerate(cell.genes):
        block = BLOCK_NAMES[block_of(pos)]
        where = f"{label} block {block} gene {pos % GENES_PER_BLOCK + 1}"
        if not 0 <= gene.op < NUM_OPS:
            out.append(f"{where}: op id out of range ({gene.op})")
        if gene.index not in BLOCK_INDICES[block_of(pos)]:
            out.append(f"{where}: index {gene.index} not allowed in block {block}")
    return out


def validate(genotype: Genotype) -> List[str]:
    """Return the list of encoding violations; an empty list means valid."""
    if isinstance(genotype, CellGenotype):
        return _cell_violations(genotype.normal, "normal") + _cell_violations(
            genotype.reduction, "reduction"
        )
    if isinstance(genotype, NB201Genotype):
        out = []
        if len(genotype.ops) != NB201_NUM_EDGES:
            out.append(f"expected {NB201_NUM_EDGES} ops, got {len(genotype.ops)}")
        for k, op in enumerate(genotype.ops):
            if not 0 <= op < NB201_NUM_OPS:
                out.append(f"edge {k}: op id out of range ({op})")
        return out
    raise TypeError(f"not a genotype: {genotype!r}")


def is_valid(genotype: Genotype) -> bool:
    return not validate(genotype)


def check(genotype: Genotype) -> Genotype:
    violations = validate(genotype)
    if violations:
        raise EncodingError("; ".join(violations))
    return genotype


# -- sampling ---------------------------------------------------------------


def random_gene(rng: np.random.Generator, position: int) -> Gene:
    op = int(rng.integers(NUM_OPS))
    index = int(rng.integers(len(BLOCK_INDICES[block_of(position)])))
    return Gene(op, index)


_INDEX_CHOICES = np.array([len(BLOCK_INDICES[block_of(p)]) for p in range(GENES_PER_CELL)])


def random_cell(rng: np.random.Generator) -> Cell:
    ops = rng.integers(NUM_OPS, size=GENES_PER_CELL)
    indices = rng.integers(_INDEX_CHOICES)
    return Cell(tuple(Gene(int(o), int(i)) for o, i in zip(ops, indices)))


def random_genotype(
    rng: np.random.Generator, space: SearchSpace = SearchSpace.CELL_BASED
) -> Genotype:
    """Uniform sample: every op and every allowed index equally likely."""
    if space == SearchSpace.NB201:
        return NB201Genotype(tuple(int(x) for x in rng.integers(NB201_NUM_OPS, size=6)))
    return CellGenotype(random_cell(rng), random_cell(rng))


def enumerate_nb201() -> Iterator[NB201Genotype]:
    """All 15,625 NAS-Bench-201 genotypes in lexicographic order."""
    for code in range(NB201_SPACE_SIZE):
        ops = []
        for _ in range(NB201_NUM_EDGES):
            code, digit = divmod(code, NB201_NUM_OPS)
            ops.append(digit)
        yield NB201Genotype(tuple(reversed(ops)))


def uniform_cell_genotype(op: int) -> CellGenotype:
    """A genotype with ``op`` on every edge, every gene reading X1."""
    cell = Cell(tuple(Gene(op, 0) for _ in range(GENES_PER_CELL)))
    return CellGenotype(cell, cell)


def all_skip_genotype() -> CellGenotype:
    return uniform_cell_genotype(Operation.SKIP_CONNECT)


# -- text format ------------------------------------------------------------


def serialize(genotype: Genotype) -> str:
    if isinstance(genotype, CellGenotype):
        return f"{genotype.normal}/{genotype.reduction}"
    if isinstance(genotype, NB201Genotype):
        return ",".join(str(op) for op in genotype.ops)
    raise TypeError(f"not a genotype: {genotype!r}")


def _parse_cell(text: str, offset: int, label: str) -> Cell:
    tokens = text.split("-")
    if len(tokens) != GENES_PER_CELL:
        raise GenotypeParseError(
            f"{label} cell: expected {GENES_PER_CELL} gene pairs, got {len(tokens)}",
            offset,
        )
    genes = []
    pos = offset
    for i, tok in enumerate(tokens):
        if len(tok) != 2 or not tok.isdigit():
            raise GenotypeParseError(
                f"{label} cell: malformed gene pair {i + 1} {tok!r}", pos
            )
        gene = Gene(int(tok[0]), int(tok[1]))
        block = block_of(i)
        if gene.index not in BLOCK_INDICES[block]:
            raise GenotypeParseError(
                f"{label} cell: gene pair {i + 1} {tok!r} has index {gene.index} "
                f"not allowed in block {BLOCK_NAMES[block]}",
                pos,
            )
        genes.append(gene)
        pos += len(tok) + 1
    return Cell(tuple(genes))


def parse(text: str, space: Optional[SearchSpace] = None) -> Genotype:
    """Parse genotype text.

    The space is inferred when not given: commas mean NAS-Bench-201,
    anything else is read as a cell-based chromosome.  A cell-based string
    with a single cell is accepted and reused for the reduction cell.
    """
    text = text.strip()
    if space is None:
        space = SearchSpace.NB201 if "," in text else SearchSpace.CELL_BASED
    space = SearchSpace(space)
    if space is SearchSpace.NB201:
        tokens = text.split(",")
        if len(tokens) != NB201_NUM_EDGES:
            raise GenotypeParseError(
                f"expected {NB201_NUM_EDGES} comma-separated ops, got {len(tokens)}", 0
            )
        ops = []
        pos = 0
        for k, tok in enumerate(tokens):
            t = tok.strip()
            if not t.isdigit() or not 0 <= int(t) < NB201_NUM_OPS:
                raise GenotypeParseError(f"edge {k}: invalid op {tok!r}", pos)
            ops.append(int(t))
            pos += len(tok) + 1
        return NB201Genotype(tuple(ops))

    parts = text.split("/")
    if len(parts) > 2:
        raise GenotypeParseError(
            f"expected at most two cells separated by '/', got {len(parts)}",
            len(parts[0]) + len(parts[1]) + 2,
        )
    normal = _parse_cell(parts[0], 0, "normal")
    # A single cell is shorthand for using it as both normal and reduction cell.
    reduction = (
        _parse_cell(parts[1], len(parts[0]) + 1, "reduction") if len(parts) == 2 else normal
    )
    genotype = CellGenotype(normal, reduction)
    violations = validate(genotype)
    if violations:
        raise GenotypeParseError("; ".join(violations), 0)
    return genotype


# -- decoding ---------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    id: str
    role: str  # cell_input_x1 | cell_input_x2 | block_node | cell_output


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    op: Optional[str]  # None marks a concatenation edge into cell_output


@dataclass(frozen=True)
class ArchitectureGraph:
    nodes: Tuple[Node, ...]
    edges: Tuple[Edge, ...]

    @property
    def op_edges(self) -> List[Edge]:
        return [e for e in self.edges if e.op is not None]

    def is_acyclic(self) -> bool:
        indeg = {n.id: 0 for n in self.nodes}
        succ = {n.id: [] for n in self.nodes}
        for e in self.edges:
            indeg[e.dst] += 1
            succ[e.src].append(e.dst)
        ready = [n for n, d in indeg.items() if d == 0]
        seen = 0
        while ready:
            n = ready.pop()
            seen += 1
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
        return seen == len(self.nodes)

    def to_dot(self, name: str = "genotype") -> str:
        lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
        for n in self.nodes:
            lines.append(f'  "{n.id}" [label="{n.role}"];')
        for e in self.edges:
            label = e.op if e.op is not None else "concat"
            lines.append(f'  "{e.src}" -> "{e.dst}" [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _decode_cell(cell: Cell, prefix: str) -> Tuple[List[Node], List[Edge]]:
    x1, x2, out = f"{prefix}x1", f"{prefix}x2", f"{prefix}out"
    nodes = [Node(x1, "cell_input_x1"), Node(x2, "cell_input_x2")]
    nodes += [Node(f"{prefix}{BLOCK_NAMES[b]}", "block_node") for b in range(4)]
    nodes.append(Node(out, "cell_output"))
    edges = []
    for b, pair in enumerate(cell.blocks):
        dst = f"{prefix}{BLOCK_NAMES[b]}"
        for g_pos, gene in enumerate(pair):
            if gene.index not in BLOCK_INDICES[b]:
                raise EncodingError(
                    f"block {BLOCK_NAMES[b]} gene {g_pos + 1}: index {gene.index} "
                    f"not allowed (allowed {list(BLOCK_INDICES[b])})"
                )
            kind, j = gene_source(gene)
            src = (x1, x2)[j] if kind == "input" else f"{prefix}{BLOCK_NAMES[j]}"
            edges.append(Edge(src, dst, Operation(gene.op).kind))
    edges += [Edge(f"{prefix}{BLOCK_NAMES[b]}", out, None) for b in range(4)]
    return nodes, edges


def decode(genotype: Genotype) -> ArchitectureGraph:
    """Decode a genotype to its explicit cell graph(s).

    Cell-based genotypes yield both cells in one graph, node ids prefixed
    ``normal.`` and ``reduction.``.
    """
    if isinstance(genotype, NB201Genotype):
        check(genotype)
        nodes = [Node("n0", "cell_input_x1")]
        nodes += [Node(f"n{i}", "block_node") for i in (1, 2)]
        nodes.append(Node("n3", "cell_output"))
        edges = [
            Edge(f"n{s}", f"n{d}", NB201Operation(op).kind)
            for (s, d), op in zip(NB201_EDGES, genotype.ops)
        ]
        return ArchitectureGraph(tuple(nodes), tuple(edges))
    for label, cell in (("normal", genotype.normal), ("reduction", genotype.reduction)):
        for pos, gene in enumerate(cell.genes):
            if not 0 <= gene.op < NUM_OPS:
                raise EncodingError(
                    f"{label} block {BLOCK_NAMES[block_of(pos)]} gene "
                    f"{pos % 2 + 1}: op id out of range ({gene.op})"
                )
    nodes: List[Node] = []
    edges: List[Edge] = []
    for label, cell in (("normal", genotype.normal), ("reduction", genotype.reduction)):
        n, e = _decode_cell(cell, f"{label}.")
        nodes += n
        edges += e
    return ArchitectureGraph(tuple(nodes), tuple(edges))


def genotype_from_pairs(normal: Sequence[Tuple[int, int]], reduction=None) -> CellGenotype:
    normal_cell = Cell(tuple(Gene(o, i) for o, i in normal))
    red_cell = normal_cell if reduction is None else Cell(tuple(Gene(o, i) for o, i in reduction))
    return CellGenotype(normal_cell, red_cell)
