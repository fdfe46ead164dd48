"""Batch evaluation of KEP methods and the exact-solver scaling experiment."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Instance, load_instance, score, validate
from .exact import ComponentOverflow, solve_exact
from .gen import GenConfig, derive_seed, edge_capacity, generate, instance_files
from .greedy import greedy_cycles, greedy_paths
from .scorer import ScorerParams, load_checkpoint, score_edges
from .train import predict

LOGGER = logging.getLogger(__name__)

METHODS = ("greedy_paths", "greedy_cycles", "gnn_greedy_paths", "gnn_greedy_cycles",
           "unsupervised_gnn", "exact")
GNN_METHODS = {"gnn_greedy_paths": "two_stage_paths",
               "gnn_greedy_cycles": "two_stage_cycles",
               "unsupervised_gnn": "unsupervised_gnn"}
REPORT_FORMAT = "kep-report-v1"
DECILES = tuple(range(10, 100, 10))


class ConfigurationError(ValueError):
    pass


class DominanceError(AssertionError):
    """A heuristic beat a proven optimum, so something is broken."""


@dataclass(frozen=True)
class MetricsRecord:
    instance_id: str
    method: str
    score: float
    edges_in_solution: int
    score_ratio: float
    valid: bool
    invalid_edge_count: int
    elapsed: float
    status: str = "ok"


@dataclass(frozen=True)
class MethodSpec:
    name: str
    k: Optional[int] = None
    params: Optional[ScorerParams] = None
    time_limit: Optional[float] = None
    rank_key: str = "raw"
    tau: float = 0.5
    node_limit: Optional[int] = None


def make_method(name: str, k=None, checkpoint=None, time_limit=None,
                rank_key: str = "raw", tau: float = 0.5, node_limit=None) -> MethodSpec:
    """Resolve a method name and its options, loading the checkpoint if needed."""
    if name not in METHODS:
        raise ConfigurationError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    params = None
    if name in GNN_METHODS:
        if checkpoint is None:
            raise ConfigurationError(f"method {name} requires a checkpoint")
        params = checkpoint if isinstance(checkpoint, ScorerParams) else load_checkpoint(checkpoint)[0]
    if name == "exact" and time_limit is None:
        raise ConfigurationError("method exact requires a per-instance time limit")
    return MethodSpec(name, k, params, time_limit, rank_key, tau, node_limit)


def run_method(spec: MethodSpec, instance: Instance) -> tuple:
    """Return ``(selection, status)``; only the method call itself is timed by callers."""
    if spec.name == "greedy_paths":
        return greedy_paths(instance, instance.w, spec.k), "ok"
    if spec.name == "greedy_cycles":
        return greedy_cycles(instance, instance.w, spec.k), "ok"
    if spec.name == "exact":
        res = solve_exact(instance, spec.k, spec.time_limit, node_limit=spec.node_limit)
        return res.selection, "ok" if res.status in ("optimal", "infeasible_empty") else res.status
    scores = score_edges(spec.params, instance)
    return predict(GNN_METHODS[spec.name], instance, scores, spec.k, spec.rank_key, spec.tau), "ok"


def evaluate_instance(spec: MethodSpec, instance: Instance, timing: bool = True) -> MetricsRecord:
    t0 = time.perf_counter()
    try:
        sel, status = run_method(spec, instance)
    except (ComponentOverflow, ValueError, RuntimeError) as exc:
        LOGGER.warning("%s failed on %s: %s", spec.name, instance.id, exc)
        sel, status = np.zeros(instance.n_edges, dtype=bool), "error"
    elapsed = time.perf_counter() - t0 if timing else 0.0
    # never trust the method: re-validate here
    report = validate(instance, sel, spec.k)
    s = score(instance, sel)
    total = float(instance.w.sum())
    return MetricsRecord(
        instance_id=instance.id,
        method=spec.name,
        score=s,
        edges_in_solution=int(np.count_nonzero(sel)),
        score_ratio=s / total if total > 0 else 0.0,
        valid=report.valid,
        invalid_edge_count=report.invalid_edge_count,
        elapsed=elapsed,
        status=status,
    )


def _load_dataset(data) -> list:
    if isinstance(data, (str, Path)):
        return [load_instance(p) for p in instance_files(data)]
    return list(data)


def _eval_job(args):
    spec, instance, timing = args
    return evaluate_instance(spec, instance, timing)


def evaluate(spec: MethodSpec, data, workers: int = 1, timing: bool = True) -> tuple:
    """Evaluate one method on every instance; returns ``(records, report)``.

    Records come back in canonical instance-id order.
    """
    instances = sorted(_load_dataset(data), key=lambda i: i.id)
    jobs = [(spec, inst, timing) for inst in instances]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_eval_job, jobs, chunksize=4))
    else:
        records = [_eval_job(j) for j in jobs]
    return records, aggregate(records)


def evaluate_methods(specs: Sequence[MethodSpec], data, workers: int = 1,
                     timing: bool = True) -> dict:
    """Evaluate several methods on the same data and enforce exact dominance."""
    instances = _load_dataset(data)
    results = {s.name: evaluate(s, instances, workers, timing)[0] for s in specs}
    check_exact_dominance(results)
    return results


def check_exact_dominance(records_by_method: dict, tol: float = 1e-9) -> None:
    exact = {r.instance_id: r for r in records_by_method.get("exact", [])
             if r.status == "ok" and r.valid}
    for method, records in records_by_method.items():
        if method == "exact":
            continue
        for r in records:
            opt = exact.get(r.instance_id)
            if opt is not None and r.valid and r.score > opt.score + tol:
                raise DominanceError(
                    f"{method} scored {r.score} > exact {opt.score} on {r.instance_id}")


def _stats(values) -> Optional[dict]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return None
    return {
        "mean": float(v.mean()),
        "std": float(v.std()),
        "min": float(v.min()),
        "max": float(v.max()),
        "deciles": [float(x) for x in np.percentile(v, DECILES)],
    }


def aggregate(records: Sequence[MetricsRecord]) -> dict:
    """Per-method summary of scores, elapsed times and validity."""
    by_method = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    methods = {}
    for name in sorted(by_method):
        rs = by_method[name]
        methods[name] = {
            "count": len(rs),
            "validity_rate": sum(r.valid for r in rs) / len(rs),
            "failures": sum(r.status != "ok" for r in rs),
            "score": _stats([r.score for r in rs]),
            "elapsed": _stats([r.elapsed for r in rs]),
            "edges_in_solution": _stats([r.edges_in_solution for r in rs]),
            "score_ratio": _stats([r.score_ratio for r in rs]),
            "mean_invalid_edges": float(np.mean([r.invalid_edge_count for r in rs])),
        }
    return {"format": REPORT_FORMAT, "count": len(records), "methods": methods}


RECORD_COLUMNS = tuple(f.name for f in fields(MetricsRecord))


def write_records_csv(records: Sequence[MetricsRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            row = asdict(r)
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else
                             str(row[c]).lower() if isinstance(row[c], bool) else row[c]
                             for c in RECORD_COLUMNS])


def read_records_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(
                instance_id=row["instance_id"],
                method=row["method"],
                score=float(row["score"]),
                edges_in_solution=int(row["edges_in_solution"]),
                score_ratio=float(row["score_ratio"]),
                valid=row["valid"] == "true",
                invalid_edge_count=int(row["invalid_edge_count"]),
                elapsed=float(row["elapsed"]),
                status=row["status"],
            ))
    return out


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True)


def write_outputs(records, report, out_dir, config: Optional[dict] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out / "records.csv")
    if config is not None:
        report = dict(report, config=config)
    (out / "report.json").write_text(dumps_report(report))


# --------------------------------------------------------------------------- #
# Solver scaling
# --------------------------------------------------------------------------- #

SCALING_EDGE_RATIO = 5500 / 300


def scaling_config(n_nodes: int, seed: int) -> GenConfig:
    """Generator settings for one scaling run; edges capped at graph capacity."""
    cfg = GenConfig(n_nodes=n_nodes, n_edges=0, seed=seed)
    e = min(int(round(n_nodes * SCALING_EDGE_RATIO)), edge_capacity(cfg))
    return replace(cfg, n_edges=e)


def solver_scaling(sizes: Sequence[int], per_size: int, time_limit: float, seed: int,
                   k: Optional[int] = 3, timing: bool = True) -> tuple:
    """Time :func:`solve_exact` on ``per_size`` random instances per size.

    Returns ``(runs, table)``: one row per solve and one summary row per
    size.  Timed-out or overflowing runs are counted, not timed.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    runs, table = [], []
    for n in sizes:
        times, timeouts = [], 0
        for i in range(per_size):
            inst = generate(scaling_config(n, derive_seed(seed, n * 1_000_003 + i)))
            t0 = time.perf_counter()
            try:
                res = solve_exact(inst, k, time_limit)
                status = res.status
            except ComponentOverflow:
                status = "overflow"
            elapsed = time.perf_counter() - t0 if timing else 0.0
            if status in ("optimal", "infeasible_empty"):
                times.append(elapsed)
            else:
                timeouts += 1
            runs.append({"size": n, "run": i, "instance_id": inst.id, "status": status,
                         "seconds": elapsed})
        row = {"size": n, "runs": per_size, "completed": len(times), "timeouts": timeouts}
        if per_size == 0:
            pass
        elif times:
            row.update(min=float(np.min(times)), median=float(np.median(times)),
                       mean=float(np.mean(times)), max=float(np.max(times)))
        else:
            row.update(min=None, median=None, mean=None, max=None)
        if per_size:
            table.append(row)
    return runs, table


def write_scaling(runs, table, out_dir, config: Optional[dict] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("size", "run", "instance_id", "status", "seconds"))
        w.writeheader()
        for r in runs:
            w.writerow(dict(r, seconds=repr(r["seconds"])))
    cols = ("size", "runs", "completed", "timeouts", "min", "median", "mean", "max")
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in table:
            w.writerow({c: "" if r.get(c) is None else r[c] for c in cols})
    if config is not None:
        (out / "config.json").write_text(json.dumps(config, indent=1, sort_keys=True))
