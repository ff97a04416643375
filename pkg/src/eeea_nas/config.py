"""Search configuration files.

Configs are INI files; every key is optional and falls back to the defaults
of the chosen search space::

    [search]
    space = nb201
    generations = 10
    population = 100
    seed = 7

    [early_exit]
    beta = 0.5

    [evaluator]
    kind = tabular
    path = nb201_table.jsonl
"""

from __future__ import annotations

import configparser
import os
import shlex
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .cost_model import MacroConfig, default_macro
from .eepi import DEFAULT_MAX_ATTEMPTS, EarlyExitConfig
from .evaluators import ExternalEvaluator, SurrogateEvaluator, TabularEvaluator
from .evolution import EvolutionConfig
from .population import ObjectiveWeights
from .search_space import SearchSpace

OUTPUT_DIR_ENV = "EEEA_NAS_OUTPUT_DIR"
EVALUATOR_KINDS = ("surrogate", "tabular", "external")


class ConfigError(ValueError):
    pass


@dataclass
class EvaluatorBinding:
    kind: str = "surrogate"
    path: Optional[str] = None
    command: Optional[str] = None
    workers: int = 1
    timeout: float = 60.0
    epochs: int = 1
    failure_policy: str = "abort"
    salt: int = 0


@dataclass
class SearchConfig:
    space: str = SearchSpace.CELL_BASED.value
    generations: int = 30
    population: int = 40
    seed: int = 0
    k_final: int = 5
    output_dir: str = ""
    beta: float = 0.0
    max_attempts_per_slot: int = DEFAULT_MAX_ATTEMPTS
    strict_offspring_filter: bool = False
    w_error: float = 1 / 3
    w_flops: float = 1 / 3
    w_params: float = 1 / 3
    tournament_size: int = 2
    mutation_prob: float = 0.1
    crossover_keep_prob: float = 0.5
    macro: MacroConfig = field(default_factory=MacroConfig)
    evaluator: EvaluatorBinding = field(default_factory=EvaluatorBinding)

    @classmethod
    def defaults(cls, space="cell_based") -> "SearchConfig":
        space = SearchSpace(space)
        out = os.environ.get(OUTPUT_DIR_ENV, "runs")
        if space is SearchSpace.NB201:
            return cls(
                space=space.value,
                generations=10,
                population=100,
                tournament_size=10,
                mutation_prob=0.1,
                crossover_keep_prob=0.5,
                macro=default_macro(space),
                output_dir=out,
            )
        return cls(space=space.value, macro=default_macro(space), output_dir=out)

    @property
    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(self.w_error, self.w_flops, self.w_params)

    def validate(self) -> "SearchConfig":
        try:
            SearchSpace(self.space)
            self.evolution_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned value, got {self.seed}")
        ev = self.evaluator
        if ev.kind not in EVALUATOR_KINDS:
            raise ConfigError(f"evaluator kind must be one of {EVALUATOR_KINDS}, got {ev.kind!r}")
        if ev.kind == "tabular" and not ev.path:
            raise ConfigError("tabular evaluator needs a path")
        if ev.kind == "external" and not ev.command:
            raise ConfigError("external evaluator needs a command")
        if ev.failure_policy not in ("abort", "worst"):
            raise ConfigError(f"failure_policy must be abort or worst, got {ev.failure_policy!r}")
        if ev.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {ev.workers}")
        return self

    def evolution_config(self) -> EvolutionConfig:
        return EvolutionConfig(
            generations=self.generations,
            population=self.population,
            weights=self.weights,
            tournament_size=self.tournament_size,
            mutation_prob=self.mutation_prob,
            crossover_keep_prob=self.crossover_keep_prob,
            seed=self.seed,
            space=SearchSpace(self.space),
            early_exit=EarlyExitConfig(
                beta=self.beta,
                max_attempts_per_slot=self.max_attempts_per_slot,
                macro=self.macro,
                strict_offspring_filter=self.strict_offspring_filter,
            ),
            k_final=self.k_final,
        )

    def build_evaluator(self):
        ev = self.evaluator
        if ev.kind == "tabular":
            return TabularEvaluator(ev.path)
        if ev.kind == "external":
            return ExternalEvaluator(
                shlex.split(ev.command), workers=ev.workers, timeout=ev.timeout, epochs=ev.epochs
            )
        return SurrogateEvaluator(self.macro, salt=ev.salt)

    # -- INI round trip ------------------------------------------------------

    def to_ini(self) -> str:
        lines = []
        for section, keys in _LAYOUT.items():
            lines.append(f"[{section}]")
            for key in keys:
                value = _get(self, section, key)
                if value is None:
                    continue
                if isinstance(value, bool):
                    text = "true" if value else "false"
                elif isinstance(value, float):
                    text = repr(value)
                else:
                    text = str(value)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)


_SEARCH_KEYS = ("space", "generations", "population", "seed", "k_final", "output_dir")
_LAYOUT = {
    "search": _SEARCH_KEYS,
    "early_exit": ("beta", "max_attempts_per_slot", "strict_offspring_filter"),
    "objectives": ("w_error", "w_flops", "w_params"),
    "operators": ("tournament_size", "mutation_prob", "crossover_keep_prob"),
    "macro": ("total_cells", "init_channels", "input_resolution", "inv_res_expansion", "num_classes"),
    "evaluator": tuple(f.name for f in fields(EvaluatorBinding)),
}


def _get(cfg: SearchConfig, section: str, key: str):
    if section == "macro":
        return getattr(cfg.macro, key)
    if section == "evaluator":
        return getattr(cfg.evaluator, key)
    return getattr(cfg, key)


def _convert(section: str, key: str, text: str, current):
    text = text.strip()
    try:
        if section == "objectives":
            return float(Fraction(text))
        if isinstance(current, bool) or key == "strict_offspring_filter":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(current, int):
            return int(text, 0)
        if isinstance(current, float):
            return float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return text


def apply_overrides(cfg: SearchConfig, values: dict) -> SearchConfig:
    """Apply ``{"section.key": "text"}`` overrides; returns a new config."""
    cfg = replace(cfg, macro=cfg.macro, evaluator=replace(cfg.evaluator))
    macro_kwargs = {}
    for dotted, text in values.items():
        section, _, key = dotted.partition(".")
        if section not in _LAYOUT or key not in _LAYOUT[section]:
            raise ConfigError(f"unknown config key {dotted!r}")
        value = _convert(section, key, text, _get(cfg, section, key))
        if section == "macro":
            macro_kwargs[key] = value
        elif section == "evaluator":
            setattr(cfg.evaluator, key, value)
        else:
            setattr(cfg, key, value)
    if macro_kwargs:
        try:
            cfg.macro = replace(cfg.macro, **macro_kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path=None, overrides: Optional[dict] = None) -> SearchConfig:
    """Read a config file (or none) and apply ``section.key`` overrides.

    Relative tabular paths are resolved against the config file's directory.
    """
    values = {}
    base = Path(".")
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = Path(path).resolve().parent
        for section in parser.sections():
            for key, text in parser.items(section):
                values[f"{section}.{key}"] = text
    values.update(overrides or {})
    space = values.get("search.space", SearchSpace.CELL_BASED.value).strip()
    try:
        cfg = SearchConfig.defaults(space)
    except ValueError as exc:
        raise ConfigError(f"[search] space: {exc}") from exc
    cfg = apply_overrides(cfg, values)
    if cfg.evaluator.path and not Path(cfg.evaluator.path).is_absolute():
        cfg.evaluator.path = str(base / cfg.evaluator.path)
    return cfg.validate()
