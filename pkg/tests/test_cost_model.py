import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import tensor_cost_oracle
from eeea_nas.cost_model import (
    NB201_MACRO,
    ConfigurationError,
    MacroConfig,
    architecture_cost,
    op_flops,
    op_params,
)
from eeea_nas.search_space import (
    NB201Genotype,
    Operation,
    SearchSpace,
    all_skip_genotype,
    decode,
    genotype_from_pairs,
    parse,
    random_genotype,
    serialize,
)

MACROS = [
    MacroConfig(),
    MacroConfig(total_cells=20, init_channels=36, input_resolution=32),
    MacroConfig(total_cells=5, init_channels=12, input_resolution=27, inv_res_expansion=16, num_classes=100),
]


@pytest.mark.parametrize(
    "op,expected",
    [
        (Operation.SEP_CONV_3X3, 16 * 9 + 256 + 32),
        (Operation.SEP_CONV_5X5, 16 * 25 + 256 + 32),
        (Operation.DIL_CONV_3X3, 16 * 9 + 256 + 32),
        (Operation.INV_RES_3X3, 16 * 96 + 96 * 9 + 96 * 16 + 2 * (16 + 96 + 96)),
        (Operation.MAX_POOL_3X3, 0),
        (Operation.AVG_POOL_3X3, 0),
        (Operation.SKIP_CONNECT, 0),
    ],
)
def test_op_params_at_16_channels(op, expected):
    assert op_params(op, 16) == expected


def test_op_params_fixtures():
    assert op_params(Operation.SEP_CONV_3X3, 16) == 432
    assert op_params(Operation.INV_RES_3X3, 16, expansion=6) == 4352


def test_op_flops_fixtures():
    assert op_flops(Operation.SKIP_CONNECT, 64, 7) == 0
    assert op_flops(Operation.SEP_CONV_3X3, 16, 32) == 409_600
    assert op_flops(Operation.MAX_POOL_3X3, 16, 32) == 147_456


def test_op_rejects_bad_sizes():
    with pytest.raises(ValueError):
        op_params(Operation.SEP_CONV_3X3, 0)
    with pytest.raises(ValueError):
        op_flops(Operation.SEP_CONV_3X3, 16, 0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"total_cells": 2},
        {"init_channels": 0},
        {"input_resolution": 4},
        {"inv_res_expansion": 0},
        {"num_classes": 0},
    ],
)
def test_macro_validation(kwargs):
    with pytest.raises(ConfigurationError):
        MacroConfig(**kwargs)


def test_architecture_cost_rejects_non_macro():
    with pytest.raises(ConfigurationError):
        architecture_cost(all_skip_genotype(), {"total_cells": 8})


def test_all_skip_is_stem_preprocessing_and_head():
    c = 32
    params = 27 * c + 2 * c
    chans = [c, c]
    width = c
    for i in range(8):
        if i in (2, 5):
            width *= 2
        params += sum(cin * width + 2 * width for cin in chans)
        chans = [chans[1], 4 * width]
    params += chans[1] * 10 + 10
    report = architecture_cost(all_skip_genotype(), MacroConfig())
    assert report.params_count == params
    assert report.params == pytest.approx(0.384426)


def test_matches_tensor_oracle():
    rng = np.random.default_rng(31)
    for _ in range(20):
        g = random_genotype(rng)
        for macro in MACROS:
            expected = tensor_cost_oracle(
                decode(g), macro.total_cells, macro.init_channels,
                macro.input_resolution, macro.inv_res_expansion, macro.num_classes,
            )
            report = architecture_cost(g, macro)
            assert (report.params_count, report.flops_count) == expected


def test_per_cell_sums_to_total():
    report = architecture_cost(random_genotype(np.random.default_rng(1)))
    assert len(report.per_cell) == 8
    total = report.stem[0] + report.head[0] + sum(p for _, p, _ in report.per_cell)
    assert total == report.params_count


def test_report_json_fields():
    report = architecture_cost(parse("40-30-61-31-00-60-42-13"))
    data = json.loads(report.to_json())
    assert data["params_m"] == report.params
    assert data["flops_m"] == report.flops
    assert len(data["per_cell"]) == 8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flops_scale_by_four_when_resolution_doubles(seed):
    g = random_genotype(np.random.default_rng(seed))
    small = architecture_cost(g, MacroConfig(input_resolution=32))
    big = architecture_cost(g, MacroConfig(input_resolution=64))
    # the classifier runs after global pooling, so its MACs do not scale
    assert big.flops_count - big.head[1] == 4 * (small.flops_count - small.head[1])
    assert big.params_count == small.params_count


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_doubling_channels_increases_params(seed):
    g = random_genotype(np.random.default_rng(seed))
    a = architecture_cost(g, MacroConfig(init_channels=16))
    b = architecture_cost(g, MacroConfig(init_channels=32))
    assert b.params_count > a.params_count


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cost_invariant_under_round_trip(seed):
    g = random_genotype(np.random.default_rng(seed))
    a = architecture_cost(g)
    b = architecture_cost(parse(serialize(g)))
    assert (a.params_count, a.flops_count) == (b.params_count, b.flops_count)


def test_inv_res_expansion_is_configurable():
    g = genotype_from_pairs([(6, 0)] * 2 + [(6, 0)] * 6)
    six = architecture_cost(g, MacroConfig(inv_res_expansion=6))
    sixteen = architecture_cost(g, MacroConfig(inv_res_expansion=16))
    assert sixteen.params_count > six.params_count


def test_nb201_extremes_match_benchmark_sizes():
    # smallest and largest architectures of the benchmark's CIFAR-10 network
    assert architecture_cost(NB201Genotype((0,) * 6), NB201_MACRO).params_count == 73_306
    assert architecture_cost(NB201Genotype((3,) * 6), NB201_MACRO).params_count == 1_531_546


def test_random_cell_based_param_range():
    rng = np.random.default_rng(0)
    params = [architecture_cost(random_genotype(rng)).params for _ in range(500)]
    assert 1.5 < np.median(params) < 2.7
    assert max(params) < 6.0
    assert min(params) > 0.38
