"""Fitness sources: tabular lookup, a deterministic surrogate, and an external process bridge.

External evaluators speak newline-delimited JSON on stdin/stdout. Requests
look like ``{"id": 3, "genotype": "0,1,2,3,4,0", "epochs": 1}`` and the
child must answer each with one flushed line::

    {"id": 3, "error": 0.41, "params_m": null, "flops_m": null, "cost_units": 12.5}
"""

from __future__ import annotations

import collections
import hashlib
import json
import logging
import math
import queue
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .cost_model import MacroConfig, architecture_cost, default_macro
from .search_space import (
    Genotype,
    NB201Genotype,
    NB201Operation,
    Operation,
    enumerate_nb201,
    parse,
    serialize,
)

log = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    """Base class for evaluator failures."""


class ArchitectureNotInBenchmark(EvaluationError):
    def __init__(self, key: str):
        super().__init__(f"architecture not in benchmark: {key}")
        self.key = key


class ResultRangeError(EvaluationError):
    pass


class ExternalTimeoutError(EvaluationError):
    pass


class ExternalProtocolError(EvaluationError):
    def __init__(self, message: str, payload: str):
        super().__init__(f"{message}: {payload!r}")
        self.payload = payload


class ExternalExitError(EvaluationError):
    def __init__(self, returncode: Optional[int], stderr: str):
        super().__init__(f"evaluator process exited with code {returncode}: {stderr!r}")
        self.returncode = returncode
        self.stderr = stderr


@dataclass(frozen=True)
class EvaluationRequest:
    id: int
    genotype: str
    epochs: int = 1

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "genotype": self.genotype, "epochs": self.epochs})


@dataclass(frozen=True)
class EvaluationResult:
    id: int
    error: float
    flops: Optional[float] = None
    params: Optional[float] = None
    cost_units: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.error, (int, float)) and 0.0 <= self.error <= 1.0):
            raise ResultRangeError(f"error must lie in [0, 1], got {self.error!r}")
        if not (math.isfinite(self.cost_units) and self.cost_units >= 0):
            raise ResultRangeError(f"cost_units must be >= 0, got {self.cost_units!r}")
        for name in ("flops", "params"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ResultRangeError(f"{name} must be >= 0, got {v!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "error": self.error,
            "params_m": self.params,
            "flops_m": self.flops,
            "cost_units": self.cost_units,
        }


# -- tabular ----------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkEntry:
    val_error: float
    test_error: float
    params: float
    flops: float


class TabularBenchmark:
    """Map from canonical genotype key to precomputed metrics.

    On disk: one JSON object per line with keys ``arch, val_error,
    test_error, params_m, flops_m``.
    """

    def __init__(self, entries: Optional[Dict[str, BenchmarkEntry]] = None):
        self.entries: Dict[str, BenchmarkEntry] = dict(entries or {})

    def __len__(self):
        return len(self.entries)

    def __contains__(self, genotype) -> bool:
        return self.key(genotype) in self.entries

    @staticmethod
    def key(genotype: Union[Genotype, str]) -> str:
        if isinstance(genotype, str):
            genotype = parse(genotype)
        return serialize(genotype)

    def lookup(self, genotype) -> BenchmarkEntry:
        key = self.key(genotype)
        try:
            return self.entries[key]
        except KeyError:
            raise ArchitectureNotInBenchmark(key) from None

    @classmethod
    def load(cls, path) -> "TabularBenchmark":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = cls.key(rec["arch"])
                    entries[key] = BenchmarkEntry(
                        float(rec["val_error"]),
                        float(rec["test_error"]),
                        float(rec["params_m"]),
                        float(rec["flops_m"]),
                    )
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad benchmark line: {exc}") from exc
        return cls(entries)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, e in self.entries.items():
                rec = {
                    "arch": key,
                    "val_error": e.val_error,
                    "test_error": e.test_error,
                    "params_m": e.params,
                    "flops_m": e.flops,
                }
                fh.write(json.dumps(rec) + "\n")


def evaluate_tabular(bench: TabularBenchmark, g: Genotype, request_id: int = 0) -> EvaluationResult:
    e = bench.lookup(g)
    return EvaluationResult(request_id, e.val_error, flops=e.flops, params=e.params, cost_units=0.0)


# -- surrogate ---------------------------------------------------------------

ERROR_FLOOR = 0.05
ERROR_CEILING = 0.95
# logit = -PARAMS_COEF * z(params) - DIVERSITY_COEF * z(diversity) + NOISE_COEF * noise
PARAMS_COEF = 1.5
DIVERSITY_COEF = 0.3
NOISE_COEF = 0.4
# log-params centre and scale per space (params in millions)
PARAMS_CENTER = {"cell_based": 2.0, "nb201": 0.6}
PARAMS_SCALE = {"cell_based": 0.5, "nb201": 0.8}

_CELL_WEIGHTED = frozenset(
    op for op in Operation if op.kind.startswith(("sep_conv", "dil_conv", "inv_res"))
)
_NB201_WEIGHTED = frozenset({NB201Operation.NOR_CONV_1X1, NB201Operation.NOR_CONV_3X3})


def hash_noise(key: str, salt: int = 0) -> float:
    """Deterministic pseudo-noise in [-1, 1) derived from a genotype key."""
    digest = hashlib.sha256(f"{salt}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**63 - 1.0


def op_diversity(g: Genotype) -> float:
    """Fraction of the space's weight-bearing op kinds used by ``g``."""
    if isinstance(g, NB201Genotype):
        used = {NB201Operation(o) for o in g.ops} & _NB201_WEIGHTED
        return len(used) / len(_NB201_WEIGHTED)
    ops = {Operation(gene.op) for cell in g.cells for gene in cell.genes}
    return len(ops & _CELL_WEIGHTED) / len(_CELL_WEIGHTED)


def surrogate_error(params_m: float, diversity: float, noise: float, space: str) -> float:
    """Closed-form surrogate error; lower for larger, more varied models."""
    if diversity == 0:
        return ERROR_CEILING
    z_params = (math.log(params_m) - math.log(PARAMS_CENTER[space])) / PARAMS_SCALE[space]
    z_div = (diversity - 0.5) / 0.25
    logit = -PARAMS_COEF * z_params - DIVERSITY_COEF * z_div + NOISE_COEF * noise
    return ERROR_FLOOR + (ERROR_CEILING - ERROR_FLOOR) / (1.0 + math.exp(-logit))


def evaluate_surrogate(
    g: Genotype, macro: Optional[MacroConfig] = None, salt: int = 0, request_id: int = 0
) -> EvaluationResult:
    """Deterministic synthetic fitness.

    Architectures without any weight-bearing op score ``ERROR_CEILING``.
    ``cost_units`` equals the model's parameter count in millions, standing
    in for a training cost proportional to model size.
    """
    space = g.space.value
    macro = macro or default_macro(g.space)
    cost = architecture_cost(g, macro)
    error = surrogate_error(cost.params, op_diversity(g), hash_noise(serialize(g), salt), space)
    return EvaluationResult(
        request_id, error, flops=cost.flops, params=cost.params, cost_units=cost.params
    )


def generate_nb201_table(seed: int = 0, macro: Optional[MacroConfig] = None) -> TabularBenchmark:
    """Synthetic NAS-Bench-201-shaped table scored by the surrogate.

    The seed salts the surrogate noise; test error adds a second small
    deterministic perturbation.
    """
    entries = {}
    for g in enumerate_nb201():
        r = evaluate_surrogate(g, macro, salt=seed)
        key = serialize(g)
        test_error = min(1.0, max(0.0, r.error + 0.01 * hash_noise(key, seed + 1)))
        entries[key] = BenchmarkEntry(r.error, test_error, r.params, r.flops)
    return TabularBenchmark(entries)


# -- external process bridge --------------------------------------------------


def _parse_response(line: str, expected_id: int) -> EvaluationResult:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        raise ExternalProtocolError("malformed response", line) from None
    if not isinstance(msg, dict):
        raise ExternalProtocolError("response is not a JSON object", line)
    rid = msg.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise ExternalProtocolError("response id missing or not an integer", line)
    if rid != expected_id:
        raise ExternalProtocolError(f"response id {rid} does not match request {expected_id}", line)

    def number(name, optional):
        v = msg.get(name)
        if v is None and optional:
            return None
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ExternalProtocolError(f"field {name!r} missing or not a number", line)
        return float(v)

    error = number("error", False)
    cost_units = number("cost_units", True)
    return EvaluationResult(
        rid,
        error,
        flops=number("flops_m", True),
        params=number("params_m", True),
        cost_units=0.0 if cost_units is None else cost_units,
    )


class ExternalWorker:
    """One child process; one request in flight at a time."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self.proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._stderr = collections.deque(maxlen=20)
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _pump_stderr(self):
        for line in self.proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def request(self, req: EvaluationRequest, timeout: Optional[float]) -> EvaluationResult:
        try:
            self.proc.stdin.write(req.to_json() + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise self._exit_error() from None
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            self.close()
            raise ExternalTimeoutError(
                f"no response to request {req.id} within {timeout}s"
            ) from None
        if line is None:
            raise self._exit_error()
        return _parse_response(line.strip(), req.id)

    def _exit_error(self) -> ExternalExitError:
        try:
            code = self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            code = None
        return ExternalExitError(code, "\n".join(self._stderr))

    @property
    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()


def evaluate_external(
    endpoint: Sequence[str], req: EvaluationRequest, timeout: Optional[float] = 60.0
) -> EvaluationResult:
    """Run one request against a freshly started evaluator process."""
    worker = ExternalWorker(endpoint)
    try:
        return worker.request(req, timeout)
    finally:
        worker.close()


# -- evaluator objects used by the search ------------------------------------


class Evaluator:
    """Callable fitness source: ``evaluate(genotype, request_id)``."""

    def evaluate(self, genotype: Genotype, request_id: int = 0) -> EvaluationResult:
        raise NotImplementedError

    def close(self):
        pass


class SurrogateEvaluator(Evaluator):
    def __init__(self, macro: Optional[MacroConfig] = None, salt: int = 0):
        self.macro = macro
        self.salt = salt

    def evaluate(self, genotype, request_id=0):
        return evaluate_surrogate(genotype, self.macro, self.salt, request_id)


class TabularEvaluator(Evaluator):
    def __init__(self, bench: Union[TabularBenchmark, str, Path]):
        self.bench = bench if isinstance(bench, TabularBenchmark) else TabularBenchmark.load(bench)

    def evaluate(self, genotype, request_id=0):
        return evaluate_tabular(self.bench, genotype, request_id)


class ExternalEvaluator(Evaluator):
    """Pool of external worker processes, started lazily.

    A worker that times out or dies is discarded and replaced on next use.
    """

    def __init__(
        self,
        command: Sequence[str],
        workers: int = 1,
        timeout: Optional[float] = 60.0,
        epochs: int = 1,
    ):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.command = list(command)
        self.timeout = timeout
        self.epochs = epochs
        self._idle: "queue.Queue[Optional[ExternalWorker]]" = queue.Queue()
        self._all: List[ExternalWorker] = []
        self._lock = threading.Lock()
        for _ in range(workers):
            self._idle.put(None)

    def evaluate(self, genotype, request_id=0):
        worker = self._idle.get()
        try:
            if worker is None or not worker.alive:
                worker = ExternalWorker(self.command)
                with self._lock:
                    self._all.append(worker)
            req = EvaluationRequest(request_id, serialize(genotype), self.epochs)
            try:
                return worker.request(req, self.timeout)
            except EvaluationError:
                worker.close()
                worker = None
                raise
        finally:
            self._idle.put(worker)

    def close(self):
        with self._lock:
            for w in self._all:
                w.close()
            self._all.clear()


def objectives_from(result: EvaluationResult, cost) -> tuple:
    """(error, flops, params), evaluator-supplied costs taking precedence."""
    flops = result.flops if result.flops is not None else cost.flops
    params = result.params if result.params is not None else cost.params
    return result.error, flops, params

