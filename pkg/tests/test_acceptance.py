"""The nine acceptance criteria, one test each.

Each test records a ``PASS``/``FAIL`` line that is printed in the pytest
terminal summary.
"""

import json
import math
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, WORKED_CHILD, PARENT_1, PARENT_2, STUB
from oracles import brute_force_fronts, monte_carlo_hv, tensor_cost_oracle
from eeea_nas import cli
from eeea_nas.cost_model import MacroConfig, architecture_cost
from eeea_nas.eepi import STREAM_INIT, EarlyExitConfig, derive_rng, initialize_population
from eeea_nas.evaluators import SurrogateEvaluator, TabularBenchmark
from eeea_nas.evolution import (
    EvaluationService,
    EvolutionConfig,
    mutate_at,
    non_dominated_sort,
    recombine_cells,
    run_search,
)
from eeea_nas.metrics import hypervolume, normalized_hv_series
from eeea_nas.population import Individual, ObjectiveVector
from eeea_nas.search_space import Gene, decode, gene_source, parse, random_genotype


@contextmanager
def criterion(number, title, budget):
    t0 = time.monotonic()
    try:
        yield
    except BaseException as exc:
        elapsed = time.monotonic() - t0
        ACCEPTANCE_LINES.append(f"{number}. FAIL {title} ({elapsed:.1f}s): {exc!r}"[:300])
        raise
    elapsed = time.monotonic() - t0
    within = elapsed < budget
    status = "PASS" if within else "FAIL"
    ACCEPTANCE_LINES.append(f"{number}. {status} {title} ({elapsed:.1f}s, budget {budget}s)")
    print(ACCEPTANCE_LINES[-1])
    assert within, f"took {elapsed:.1f}s, budget {budget}s"


def test_1_encoding_fixtures():
    with criterion(1, "encoding fixtures", 1):
        assert [gene_source(Gene(1, 2)), gene_source(Gene(0, 2))] == [("block", 0)] * 2
        assert [gene_source(Gene(6, 3)), gene_source(Gene(7, 3))] == [("block", 1)] * 2
        assert [gene_source(Gene(6, 3)), gene_source(Gene(7, 2))] == [("block", 1), ("block", 0)]
        graph = decode(parse("40-30-00-00-12-02-63-72"))
        d_srcs = sorted(e.src for e in graph.op_edges if e.dst == "normal.D")
        assert d_srcs == ["normal.A", "normal.B"]

        p1, p2 = parse(PARENT_1), parse(PARENT_2)
        picks = (1, 1, 1, 2, (1, 2), 2, (2, 1), 1)
        child = recombine_cells(p1.normal, p2.normal, picks)
        assert str(child) == WORKED_CHILD

        before = parse(WORKED_CHILD)
        after = mutate_at(before, 5, (3, 3))
        changed = [
            i for i, (a, b) in enumerate(zip(before.normal.genes, after.normal.genes)) if a != b
        ]
        assert changed == [5] and after.normal.genes[5] == Gene(3, 3)
        assert after.reduction == before.reduction


def test_2_eepi_budget():
    with criterion(2, "EE-PI invariant over 1,000 initialisations", 10):
        rng = np.random.default_rng(2)
        checked = 0
        for seed in range(1000):
            beta = float(rng.uniform(1.0, 5.0))
            pop = initialize_population(10, EarlyExitConfig(beta=beta), seed=seed)
            assert all(ind.cost.params <= beta for ind in pop)
            checked += len(pop)
        assert checked == 10_000
        for seed in range(50):
            pop = initialize_population(5, EarlyExitConfig(beta=0.0), seed=seed)
            raw = [random_genotype(derive_rng(seed, STREAM_INIT, slot)) for slot in range(5)]
            assert [ind.genotype for ind in pop] == raw


def test_3_sorting_oracle():
    with criterion(3, "non-dominated sort equals brute force on 100 populations", 5):
        rng = np.random.default_rng(3)
        genotype = parse(PARENT_1)
        for trial in range(100):
            n = int(rng.integers(1, 65))
            pts = rng.random((n, 3))
            if trial % 2:
                pts = np.round(pts * 4) / 4  # ties and duplicates
            pts = [tuple(float(x) for x in p) for p in pts]
            pop = [Individual(genotype, objectives=ObjectiveVector(*p)) for p in pts]
            ids = {id(ind): i for i, ind in enumerate(pop)}
            got = [sorted(ids[id(ind)] for ind in f) for f in non_dominated_sort(pop)]
            assert got == brute_force_fronts(pts)


def sphere_front(rng, m):
    v = np.abs(rng.normal(size=(m, 3)))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_4_hypervolume_oracle():
    with criterion(4, "exact hypervolume within 1% of Monte Carlo on 100 fronts", 60):
        assert hypervolume([(0.5, 0.5)], (1, 1)) == 0.25
        assert hypervolume([(0, 0, 0)], (1, 1, 1)) == 1.0
        rng = np.random.default_rng(4)
        worst = 0.0
        for trial in range(100):
            front = sphere_front(rng, int(rng.integers(10, 51)))
            exact = hypervolume(front, (1, 1, 1))
            approx = monte_carlo_hv(front, (1, 1, 1), samples=1_000_000, seed=trial)
            worst = max(worst, abs(exact - approx) / approx)
            assert abs(exact - approx) <= 0.01 * approx, (trial, exact, approx)
        print(f"largest relative gap {worst:.4%}")


def test_5_cost_oracle():
    macros = [
        MacroConfig(),
        MacroConfig(total_cells=14, init_channels=20, input_resolution=32, inv_res_expansion=6),
        MacroConfig(total_cells=6, init_channels=44, input_resolution=24, inv_res_expansion=16, num_classes=100),
    ]
    with criterion(5, "cost model equals per-tensor oracle on 50 genotypes x 3 macros", 5):
        rng = np.random.default_rng(5)
        for _ in range(50):
            g = random_genotype(rng)
            graph = decode(g)
            for m in macros:
                report = architecture_cost(g, m)
                expected = tensor_cost_oracle(
                    graph, m.total_cells, m.init_channels, m.input_resolution,
                    m.inv_res_expansion, m.num_classes,
                )
                assert (report.params_count, report.flops_count) == expected


def test_6_hv_monotone():
    with criterion(6, "normalized HV non-decreasing in 20 seeded runs", 60):
        for seed in range(20):
            cfg = EvolutionConfig(generations=10, population=40, seed=seed)
            result = run_search(cfg, EvaluationService(SurrogateEvaluator(), MacroConfig()))
            records = [json.loads(r.to_json()) for r in result.records]
            series = [v for _, _, v in normalized_hv_series(records)]
            assert len(series) == 10
            assert all(b >= a for a, b in zip(series, series[1:])), (seed, series)


def test_7_search_cost_direction():
    with criterion(7, "generation-1 cost lower under beta=3 than beta=0 (sign test)", 30):
        constrained, free = [], []
        for seed in range(20):
            for beta, sink in ((3.0, constrained), (0.0, free)):
                cfg = EvolutionConfig(
                    generations=1, population=40, seed=seed, early_exit=EarlyExitConfig(beta=beta)
                )
                result = run_search(cfg, EvaluationService(SurrogateEvaluator(), MacroConfig()))
                sink.append(result.generation1_cost_units)
        wins = sum(c < f for c, f in zip(constrained, free))
        p = sum(math.comb(20, k) for k in range(wins, 21)) / 2**20
        print(f"beta=3 cheaper in {wins}/20 seeds, p={p:.2g}, "
              f"means {np.mean(constrained):.2f} vs {np.mean(free):.2f}")
        assert np.mean(constrained) < np.mean(free)
        assert p < 0.05


def test_8_nb201_protocol(tmp_path):
    with criterion(8, "NB201 table size and tabular search", 120):
        table = tmp_path / "nb201.jsonl"
        assert cli.main(["benchgen", str(table), "--seed", "0"]) == 0
        bench = TabularBenchmark.load(table)
        assert len(bench) == 15_625
        params = [e.params for e in bench.entries.values()]
        lo, hi = min(params), max(params)
        beta = lo + 0.25 * (hi - lo)
        ini = tmp_path / "nb201.ini"
        ini.write_text(
            "[search]\nspace = nb201\ngenerations = 10\npopulation = 100\nseed = 8\n"
            f"[early_exit]\nbeta = {beta!r}\n"
            "[operators]\nmutation_prob = 0.1\ntournament_size = 10\n"
            "[evaluator]\nkind = tabular\npath = nb201.jsonl\n"
        )
        logs = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert cli.main(["search", str(ini), "--output-dir", str(out)]) == 0
            logs.append((out / "run_log.jsonl").read_bytes())
            front = json.loads((out / "pareto.json").read_text())["front"]
            assert front and all(m["genotype"] in bench for m in front)
        assert logs[0] == logs[1]
        assert len(logs[0].splitlines()) == 10


def test_9_determinism(tmp_path):
    with criterion(9, "byte-identical run logs, serial and with parallel workers", 60):
        base = ["--seed", "99", "--generations", "5", "--population", "20"]
        external = [
            "--set", "evaluator.kind=external",
            "--set", f"evaluator.command={sys.executable} {STUB} surrogate",
        ]
        variants = {
            "serial_1": base,
            "serial_2": base,
            "parallel_1": base + external + ["--workers", "4"],
            "parallel_2": base + external + ["--workers", "4"],
        }
        logs = {}
        for name, args in variants.items():
            out = tmp_path / name
            assert cli.main(["search", *args, "--output-dir", str(out)]) == 0
            logs[name] = (out / "run_log.jsonl").read_bytes()
        assert logs["serial_1"] == logs["serial_2"]
        assert logs["parallel_1"] == logs["parallel_2"]
