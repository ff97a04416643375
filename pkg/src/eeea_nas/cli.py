"""Command-line entry point: ``eeea-nas {search,decode,hv,benchgen,validate-config}``.

Exit codes: 0 ok, 2 config error, 3 infeasible beta, 4 evaluator failure,
5 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import metrics
from .config import ConfigError, load_config
from .cost_model import ConfigurationError, architecture_cost, default_macro
from .eepi import BudgetInfeasibleError
from .evaluators import EvaluationError, generate_nb201_table
from .evolution import EvaluationService, EvaluatorFailure, run_search
from .search_space import GenotypeParseError, decode, parse

log = logging.getLogger("eeea_nas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_EVALUATOR = 4
EXIT_IO = 5


def _overrides(args) -> dict:
    out = {}
    for flag, key in (
        ("seed", "search.seed"),
        ("generations", "search.generations"),
        ("population", "search.population"),
        ("output_dir", "search.output_dir"),
        ("beta", "early_exit.beta"),
        ("workers", "evaluator.workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value
    return out


def _individual_json(ind) -> dict:
    error, flops, params = ind.objectives.as_tuple()
    return {"genotype": ind.key, "error": error, "flops_m": flops, "params_m": params}


def cmd_search(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")

    evaluator = cfg.build_evaluator()
    service = EvaluationService(
        evaluator, cfg.macro, workers=cfg.evaluator.workers,
        failure_policy=cfg.evaluator.failure_policy,
    )
    log_path = out / "run_log.jsonl"
    try:
        with open(log_path, "w", encoding="utf-8") as fh:

            def on_record(rec):
                fh.write(rec.to_json() + "\n")
                fh.flush()
                log.info(
                    "generation %d: hv=%.6g best_error=%.4f evals=%d",
                    rec.generation, rec.normalized_hv, rec.best_error, rec.evals_used,
                )

            result = run_search(cfg.evolution_config(), service, on_record)
    finally:
        evaluator.close()

    records = metrics.read_run_log(log_path)
    metrics.write_generation_csv(out / "generations.csv", records)
    metrics.write_scatter_csv(out / "scatter.csv", records)
    pareto = {
        "generation": result.final_population.generation,
        "front": [_individual_json(ind) for ind in result.pareto],
    }
    (out / "pareto.json").write_text(json.dumps(pareto, indent=2) + "\n", encoding="utf-8")
    selected = [_individual_json(ind) for ind in result.selected]
    (out / "selected.json").write_text(json.dumps(selected, indent=2) + "\n", encoding="utf-8")
    print(out)
    return EXIT_OK


def cmd_decode(args) -> int:
    try:
        genotype = parse(args.genotype)
    except GenotypeParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.config:
        macro = load_config(args.config).macro
    else:
        macro = default_macro(genotype.space)
    overrides = {
        k: v
        for k, v in (
            ("total_cells", args.cells),
            ("init_channels", args.channels),
            ("input_resolution", args.resolution),
            ("inv_res_expansion", args.expansion),
        )
        if v is not None
    }
    if overrides:
        macro = dataclasses.replace(macro, **overrides)
    dot = decode(genotype).to_dot()
    report = architecture_cost(genotype, macro).to_json()
    if args.dot:
        Path(args.dot).write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)
    print(report)
    return EXIT_OK


def cmd_hv(args) -> int:
    records = metrics.read_run_log(args.run_log)
    out = Path(args.out) if args.out else Path(args.run_log).parent
    out.mkdir(parents=True, exist_ok=True)
    nadir = None
    if args.nadir:
        try:
            nadir = [float(x) for x in args.nadir.split(",")]
        except ValueError:
            raise ConfigError(f"--nadir expects comma-separated numbers, got {args.nadir!r}")
        if len(nadir) != 3:
            raise ConfigError(f"--nadir needs 3 values, got {len(nadir)}")
    metrics.write_generation_csv(out / "generations.csv", records, nadir)
    metrics.write_scatter_csv(out / "scatter.csv", records)
    print(out / "generations.csv")
    return EXIT_OK


def cmd_benchgen(args) -> int:
    if args.space != "nb201":
        raise ConfigError(f"benchgen only supports the nb201 space, got {args.space!r}")
    table = generate_nb201_table(seed=args.seed)
    table.dump(args.output)
    print(f"{len(table)} entries written to {args.output}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    sys.stdout.write(cfg.to_ini())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eeea-nas", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("config", nargs="?", help="INI config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--generations", type=int)
        p.add_argument("--population", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--output-dir")
        p.add_argument(
            "--set", action="append", metavar="SECTION.KEY=VALUE",
            help="override any config key; repeatable",
        )

    p = sub.add_parser("search", help="run an early-exit evolutionary search")
    run_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("validate-config", help="check a config and print it with defaults filled in")
    run_flags(p)
    p.set_defaults(func=cmd_validate_config)

    p = sub.add_parser("decode", help="print a genotype's DOT graph and cost report")
    p.add_argument("genotype")
    p.add_argument("--config")
    p.add_argument("--cells", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--expansion", type=int)
    p.add_argument("--dot", help="write the DOT graph here instead of stdout")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("hv", help="recompute hypervolume and scatter CSVs from a run log")
    p.add_argument("run_log")
    p.add_argument("--out", help="output directory (default: next to the log)")
    p.add_argument("--nadir", help="shared reference point error,flops,params")
    p.set_defaults(func=cmd_hv)

    p = sub.add_parser("benchgen", help="write a synthetic NAS-Bench-201-shaped table")
    p.add_argument("output")
    p.add_argument("--space", default="nb201")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_benchgen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetInfeasibleError as exc:
        print(f"infeasible beta: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (EvaluatorFailure, EvaluationError) as exc:
        print(f"evaluator failure: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except metrics.RunLogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
