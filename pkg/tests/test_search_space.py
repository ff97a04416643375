import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import PARENT_1, PARENT_2
from eeea_nas.search_space import (
    BLOCK_INDICES,
    NB201_SPACE_SIZE,
    Cell,
    CellGenotype,
    EncodingError,
    Gene,
    GenotypeParseError,
    NB201Genotype,
    Operation,
    SearchSpace,
    all_skip_genotype,
    decode,
    enumerate_nb201,
    gene_source,
    genotype_from_pairs,
    parse,
    previous_index,
    random_genotype,
    serialize,
    validate,
)


def test_operation_table_is_a_bijection():
    assert len(Operation) == 9
    assert sorted(op.value for op in Operation) == list(range(9))
    assert len({op.kind for op in Operation}) == 9
    assert Operation(6).kind == "inv_res_3x3"
    assert Operation(8).kind == "skip_connect"


@pytest.mark.parametrize("index,expected", [(2, 0), (3, 1)])
def test_previous_index(index, expected):
    assert previous_index(index) == expected


@pytest.mark.parametrize("index", [0, 1, -1])
def test_previous_index_rejects_cell_input_indices(index):
    with pytest.raises(ValueError):
        previous_index(index)


def test_gene_sources_of_worked_examples():
    # "30,80" both read index 0, i.e. cell input X1
    assert gene_source(Gene(3, 0)) == ("input", 0)
    assert gene_source(Gene(8, 0)) == ("input", 0)
    # "12-02": index 2 is linked from block node 0
    assert gene_source(Gene(1, 2)) == ("block", 0)
    assert gene_source(Gene(0, 2)) == ("block", 0)
    # "63-73": index 3 is linked from block node 1
    assert gene_source(Gene(6, 3)) == ("block", 1)
    assert gene_source(Gene(7, 3)) == ("block", 1)
    # "63-72": mixed within one block
    assert gene_source(Gene(6, 3)) == ("block", 1)
    assert gene_source(Gene(7, 2)) == ("block", 0)


def test_decode_parent_1():
    g = parse(PARENT_1)
    graph = decode(g)
    normal = [e for e in graph.op_edges if e.dst.startswith("normal.")]
    assert len(normal) == 8
    a_edges = [e for e in normal if e.dst == "normal.A"]
    assert [(e.op, e.src) for e in a_edges] == [
        ("dil_conv_3x3", "normal.x1"),
        ("sep_conv_5x5", "normal.x1"),
    ]
    assert graph.is_acyclic()


def test_decode_block_structure():
    graph = decode(parse(PARENT_2))
    for prefix in ("normal.", "reduction."):
        for b in "ABCD":
            incoming = [e for e in graph.op_edges if e.dst == f"{prefix}{b}"]
            assert len(incoming) == 2
        concat = [e for e in graph.edges if e.dst == f"{prefix}out"]
        assert len(concat) == 4 and all(e.op is None for e in concat)
    # block C genes "22-72" both read block A
    c_srcs = {e.src for e in graph.op_edges if e.dst == "normal.C"}
    assert c_srcs == {"normal.A"}


def test_decode_all_skip():
    graph = decode(all_skip_genotype())
    assert {e.op for e in graph.op_edges} == {"skip_connect"}


def test_decode_nb201_uniform():
    graph = decode(NB201Genotype((0,) * 6))
    assert len(graph.op_edges) == 6
    assert {e.op for e in graph.op_edges} == {"none"}
    assert graph.is_acyclic()


def test_decode_invalid_index_names_block():
    bad = genotype_from_pairs([(4, 0), (3, 1)] + [(0, 0)] * 6)
    with pytest.raises(EncodingError, match="block A gene 2"):
        decode(bad)


def test_validate_parent_2_ok():
    assert validate(parse(PARENT_2)) == []


def test_validate_reports_violations():
    g = genotype_from_pairs([(9, 0), (4, 1)] + [(0, 0)] * 6)
    msgs = validate(g)
    assert any("op id out of range" in m for m in msgs)
    assert any("index 1 not allowed in block A" in m for m in msgs)


def test_random_genotype_deterministic():
    a = random_genotype(np.random.default_rng(7))
    b = random_genotype(np.random.default_rng(7))
    assert a == b


def test_random_genotype_op_frequencies_uniform():
    rng = np.random.default_rng(2024)
    counts = np.zeros(9)
    n = 10_000
    for _ in range(n):
        g = random_genotype(rng)
        for gene in g.normal.genes:
            counts[gene.op] += 1
    total = counts.sum()
    expected = total / 9
    sigma = np.sqrt(total * (1 / 9) * (8 / 9))
    assert np.all(np.abs(counts - expected) < 5 * sigma)
    # chi-square with 8 dof; 26.12 is the 0.999 quantile
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 26.12


def test_random_genotype_index_sets_uniform():
    rng = np.random.default_rng(99)
    counts = [np.zeros(len(ix)) for ix in BLOCK_INDICES]
    for _ in range(5000):
        g = random_genotype(rng)
        for pos, gene in enumerate(g.reduction.genes):
            counts[pos // 2][gene.index] += 1
    assert counts[0][0] == counts[0].sum()
    for c in counts[1:]:
        p = 1 / len(c)
        sigma = np.sqrt(c.sum() * p * (1 - p))
        assert np.all(np.abs(c - c.sum() * p) < 5 * sigma)


def test_nb201_enumeration():
    all_g = list(enumerate_nb201())
    assert len(all_g) == NB201_SPACE_SIZE == 15_625
    assert len({g.ops for g in all_g}) == 15_625
    assert all(validate(g) == [] for g in all_g[:50])


def test_parse_serialize_examples():
    g = parse(PARENT_1 + "/" + PARENT_2)
    assert str(g.normal) == PARENT_1
    assert str(g.reduction) == PARENT_2
    assert parse(serialize(g)) == g
    # single-cell shorthand reuses the cell
    assert parse(PARENT_1) == parse(PARENT_1 + "/" + PARENT_1)
    assert parse("0,1,2,3,4,0") == NB201Genotype((0, 1, 2, 3, 4, 0))


@pytest.mark.parametrize(
    "text,pos",
    [
        ("40-30", 0),
        ("40-30-61-31-00-60-42-1x", 21),
        ("40-31-61-31-00-60-42-13", 3),
        (PARENT_1 + "/40-30", 24),
        ("0,1,2,3,4", 0),
        ("0,1,2,3,9,0", 8),
    ],
)
def test_parse_errors_carry_position(text, pos):
    with pytest.raises(GenotypeParseError) as err:
        parse(text)
    assert err.value.position == pos


gene_pairs = st.tuples(
    *[
        st.tuples(st.integers(0, 8), st.integers(0, b))
        for b in (0, 0, 1, 1, 2, 2, 3, 3)
    ]
)


@settings(max_examples=300, deadline=None)
@given(gene_pairs, gene_pairs)
def test_parse_inverts_serialize(normal, reduction):
    g = genotype_from_pairs(normal, reduction)
    assert parse(serialize(g)) == g


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=6, max_size=6))
def test_nb201_round_trip(ops):
    g = NB201Genotype(tuple(ops))
    assert parse(serialize(g), SearchSpace.NB201) == g


def test_decode_acyclic_and_no_forward_edges():
    rng = np.random.default_rng(5)
    order = {b: i for i, b in enumerate("ABCD")}
    for _ in range(10_000):
        g = random_genotype(rng)
        graph = decode(g)
        assert graph.is_acyclic()
        for e in graph.op_edges:
            src_block = e.src.split(".")[1]
            dst_block = e.dst.split(".")[1]
            if src_block in order:
                assert order[src_block] < order[dst_block]


def test_dot_export_labels():
    dot = decode(parse(PARENT_1)).to_dot()
    assert dot.startswith('digraph "genotype" {')
    assert dot.count("->") == 2 * (8 + 4)
    assert '[label="inv_res_3x3"]' in dot
    assert '[label="cell_output"]' in dot
