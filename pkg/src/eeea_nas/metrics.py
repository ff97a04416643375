"""Hypervolume, nadir reference points and Pareto-front extraction."""

from __future__ import annotations

import csv
import json
from typing import Iterable, List, Optional, Sequence, Tuple

from .population import Individual, non_dominated_fronts

NADIR_INFLATION = 1.01

Point = Tuple[float, ...]


def _point(p) -> Point:
    if isinstance(p, Individual):
        if p.objectives is None:
            raise ValueError(f"individual {p.key} has not been evaluated")
        p = p.objectives
    return tuple(float(x) for x in p)


def nadir_from_first_generation(pop: Iterable) -> Point:
    """Componentwise maximum of the first generation, inflated by 1 %."""
    points = [_point(p) for p in pop]
    if not points:
        raise ValueError("cannot build a reference point from an empty population")
    return tuple(max(col) * NADIR_INFLATION for col in zip(*points))


def pareto_indices(points: Sequence[Sequence[float]]) -> List[int]:
    """Indices of non-dominated points, in input order."""
    if not points:
        return []
    return non_dominated_fronts(points)[0]


def pareto_front(points: Sequence) -> list:
    """Maximal non-dominated subset of ``points`` (stable in input order)."""
    pts = [_point(p) for p in points]
    return [points[i] for i in pareto_indices(pts)]


def _hv2(points: List[Point], ref: Point) -> float:
    area = 0.0
    best_y = ref[1]
    for x, y in sorted(points):
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return area


def _hv(points: List[Point], ref: Point) -> float:
    if not points:
        return 0.0
    if len(ref) == 1:
        return ref[0] - min(p[0] for p in points)
    if len(ref) == 2:
        return _hv2(points, ref)
    # sweep along the last objective; each slab is the lower-dimensional
    # volume of every point at or below it
    pts = sorted(points, key=lambda p: p[-1])
    total = 0.0
    for i, p in enumerate(pts):
        upper = pts[i + 1][-1] if i + 1 < len(pts) else ref[-1]
        depth = upper - p[-1]
        if depth > 0:
            total += depth * _hv([q[:-1] for q in pts[: i + 1]], ref[:-1])
    return total


def hypervolume(front: Iterable, ref: Sequence[float]) -> float:
    """Exact volume dominated by ``front`` and bounded by ``ref`` (minimisation).

    Coordinates beyond the reference point are clipped to it, so such
    points contribute nothing along that axis.
    """
    ref = tuple(float(r) for r in ref)
    pts = []
    for p in front:
        q = tuple(min(x, r) for x, r in zip(_point(p), ref))
        if all(x < r for x, r in zip(q, ref)):
            pts.append(q)
    pts = sorted(set(pts))
    pts = [pts[i] for i in pareto_indices(pts)]
    return _hv(pts, ref)


def normalize(points: Iterable, nadir: Sequence[float]) -> List[Point]:
    """Scale each objective by its nadir component (zero components left unscaled)."""
    scale = [n if n > 0 else 1.0 for n in nadir]
    return [tuple(x / s for x, s in zip(_point(p), scale)) for p in points]


def normalized_hypervolume(front: Iterable, nadir: Sequence[float]) -> float:
    """Hypervolume of the nadir-normalised front against the unit reference."""
    return hypervolume(normalize(front, nadir), (1.0,) * len(nadir))


# -- run-log based series ----------------------------------------------------


class RunLogError(ValueError):
    pass


def read_run_log(path) -> List[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict) or "generation" not in rec:
                    raise ValueError("not a generation record")
            except ValueError as exc:
                raise RunLogError(f"{path}: corrupt run-log line {lineno}: {exc}") from exc
            records.append(rec)
    if not records:
        raise RunLogError(f"{path}: run log is empty")
    return records


def normalized_hv_series(
    records: Sequence[dict], nadir: Optional[Sequence[float]] = None
) -> List[Tuple[int, float, float]]:
    """Per generation ``(generation, hv, normalized_hv)`` from run-log records.

    Each record's ``archive`` holds the non-dominated objective vectors found
    so far.  ``nadir`` defaults to the reference point stored in the log; pass
    a shared one to compare runs on one scale.
    """
    rows = []
    for rec in records:
        try:
            ref = tuple(nadir) if nadir is not None else tuple(rec["nadir"])
            archive = [tuple(p) for p in rec["archive"]]
        except (KeyError, TypeError) as exc:
            raise RunLogError(
                f"generation {rec.get('generation')}: missing field {exc}"
            ) from exc
        rows.append(
            (rec["generation"], hypervolume(archive, ref), normalized_hypervolume(archive, ref))
        )
    return rows


def write_generation_csv(path, records: Sequence[dict], nadir=None) -> None:
    series = normalized_hv_series(records, nadir)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "hv", "normalized_hv", "best_error", "evals"])
        for (gen, hv, nhv), rec in zip(series, records):
            w.writerow([gen, repr(hv), repr(nhv), repr(rec["best_error"]), rec["evals_used"]])


def write_scatter_csv(path, records: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "error", "flops_m", "params_m"])
        for rec in records:
            for error, flops, params in rec["population"]:
                w.writerow([rec["generation"], repr(error), repr(flops), repr(params)])

