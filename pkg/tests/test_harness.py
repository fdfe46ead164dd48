import numpy as np
import pytest

import kep.harness as harness
from kep.core import Instance
from kep.gen import GenConfig, generate_dataset
from kep.harness import (
    ConfigurationError,
    DominanceError,
    MetricsRecord,
    aggregate,
    check_exact_dominance,
    dumps_report,
    evaluate,
    evaluate_methods,
    make_method,
    read_records_csv,
    solver_scaling,
    write_outputs,
    write_records_csv,
    write_scaling,
)
from kep.scorer import ScorerConfig, init

from conftest import small


@pytest.fixture(scope="module")
def data():
    return [small(12, 40, 300 + i, fractions=(0.6, 0.2, 0.2)) for i in range(8)]


def test_make_method_errors():
    with pytest.raises(ConfigurationError):
        make_method("nope")
    with pytest.raises(ConfigurationError):
        make_method("gnn_greedy_paths")
    with pytest.raises(ConfigurationError):
        make_method("exact")


def test_records_sorted_and_complete(data):
    records, report = evaluate(make_method("greedy_paths"), data)
    assert [r.instance_id for r in records] == sorted(i.id for i in data)
    assert report["methods"]["greedy_paths"]["count"] == len(data)
    assert report["methods"]["greedy_paths"]["validity_rate"] == 1.0
    assert len(report["methods"]["greedy_paths"]["score"]["deciles"]) == 9


def test_harness_revalidates(data, monkeypatch):
    def cheat(spec, inst):
        return np.ones(inst.n_edges, dtype=bool), "ok"
    monkeypatch.setattr(harness, "run_method", cheat)
    records, report = evaluate(make_method("greedy_paths"), data)
    assert not any(r.valid for r in records)
    assert all(r.invalid_edge_count > 0 for r in records)


def test_exact_dominates(data):
    specs = [make_method(m, k=3, time_limit=30) for m in ("greedy_paths", "greedy_cycles", "exact")]
    results = evaluate_methods(specs, data)
    by_id = {r.instance_id: r.score for r in results["exact"]}
    for m in ("greedy_paths", "greedy_cycles"):
        assert all(r.score <= by_id[r.instance_id] + 1e-9 for r in results[m])


def test_dominance_violation_raises():
    rec = dict(edges_in_solution=1, score_ratio=0.1, valid=True, invalid_edge_count=0, elapsed=0.0)
    recs = {"exact": [MetricsRecord("a", "exact", 1.0, **rec)],
            "greedy_paths": [MetricsRecord("a", "greedy_paths", 1.5, **rec)]}
    with pytest.raises(DominanceError):
        check_exact_dominance(recs)


def test_unsupervised_validity():
    data = [small(120, 2000, 50 + i) for i in range(5)]
    # a fresh scorer spreads prob evenly, so nothing clears the threshold
    fresh = make_method("unsupervised_gnn", checkpoint=init(ScorerConfig(), 0))
    records, _ = evaluate(fresh, data)
    assert all(r.edges_in_solution == 0 and r.valid for r in records)
    # any scorer that separates edges picks per-source winners that clash
    p = init(ScorerConfig(), 0)
    rng = np.random.default_rng(1)
    for t in p.tensors.values():
        t += rng.normal(0, 0.5, t.shape)
    _, report = evaluate(make_method("unsupervised_gnn", checkpoint=p), data)
    assert report["methods"]["unsupervised_gnn"]["validity_rate"] <= 0.2


def test_gnn_method_runs(data):
    spec = make_method("gnn_greedy_paths", checkpoint=init(ScorerConfig(), 0))
    plain, _ = evaluate(make_method("greedy_paths"), data)
    gnn, _ = evaluate(spec, data)
    assert [r.score for r in gnn] == [r.score for r in plain]


def test_empty_dataset(tmp_path):
    (tmp_path / "empty").mkdir()
    records, report = evaluate(make_method("greedy_paths"), tmp_path / "empty")
    assert records == [] and report["count"] == 0 and report["methods"] == {}


def test_workers_same_records(data):
    a, _ = evaluate(make_method("greedy_cycles"), data, workers=1, timing=False)
    b, _ = evaluate(make_method("greedy_cycles"), data, workers=2, timing=False)
    assert a == b


def test_report_regenerates_from_csv(data, tmp_path):
    records, report = evaluate(make_method("greedy_paths"), data)
    write_records_csv(records, tmp_path / "r.csv")
    back = read_records_csv(tmp_path / "r.csv")
    assert back == records
    assert dumps_report(aggregate(back)) == dumps_report(report)


def test_write_outputs(data, tmp_path):
    records, report = evaluate(make_method("greedy_paths"), data)
    write_outputs(records, report, tmp_path / "o", {"seed": 1})
    assert (tmp_path / "o" / "records.csv").exists()
    assert '"config"' in (tmp_path / "o" / "report.json").read_text()


def test_scaling_trend():
    runs, table = solver_scaling(range(5, 11), 20, 60.0, seed=0, k=3)
    medians = [row["median"] for row in table]
    assert all(a <= b for a, b in zip(medians, medians[1:]))
    assert len(runs) == 120


def test_scaling_empty():
    runs, table = solver_scaling([5, 6], 0, 1.0, seed=0)
    assert runs == [] and table == []


def test_scaling_all_timeouts(tmp_path):
    runs, table = solver_scaling([12], 3, 1e-3, seed=0, k=None)
    assert table[0]["timeouts"] == 3 and table[0]["median"] is None
    write_scaling(runs, table, tmp_path / "s", {"k": None})
    assert (tmp_path / "s" / "table.csv").read_text().splitlines()[1].endswith(",,,,")


def test_scaling_sizes_must_ascend():
    with pytest.raises(ValueError):
        solver_scaling([6, 5], 1, 1.0, seed=0)
