import csv
import subprocess
import sys
from dataclasses import replace

import pytest

from pebtree.bench import (
    CSV_COLUMNS,
    ExperimentSpec,
    build_instance,
    knn_results_match,
    linear_fit_r2,
    load_config,
    measure_preprocessing,
    point_rows,
    run_experiment,
    run_query_batch,
    run_update_round,
    sweep_configs,
    validate_cost,
    write_csv,
)
from pebtree.cli import main as cli_main
from pebtree.query import PknnResult
from pebtree.workload import WorkloadConfig, gen_queries

SMALL = WorkloadConfig(n_users=150, policies_per_user=8, theta=0.5, group_size=30, seed=17, queries_per_point=12)


@pytest.fixture(scope="module")
def small_instance():
    return build_instance(SMALL)


def test_build_instance_loads_both_indexes(small_instance):
    inst = small_instance
    assert inst.peb.entry_count == SMALL.n_users
    assert inst.bx.entry_count == SMALL.n_users
    assert inst.peb.kind == "peb" and inst.bx.kind == "bx"
    assert inst.preproc_seconds > 0
    inst.peb.tree.audit()
    inst.bx.tree.audit()


def test_point_rows_schema_and_oracle(small_instance):
    rows = point_rows(small_instance, oracle_every=1)
    assert len(rows) == 4
    combos = {(r["index"], r["query_type"]) for r in rows}
    assert combos == {("peb", "range"), ("peb", "knn"), ("bx", "range"), ("bx", "knn")}
    for row in rows:
        assert set(CSV_COLUMNS) == set(row)
        assert row["oracle_ok"] == 1.0
        assert row["mean_io"] >= 0
    # cost estimate present exactly on the policy-index range row
    est = [r["cost_estimate"] for r in rows if r["index"] == "peb" and r["query_type"] == "range"]
    assert est[0] != ""


def test_query_batch_io_deterministic(small_instance):
    queries = gen_queries(SMALL, "range", list(small_instance.objects.values()))
    a = run_query_batch(small_instance, "peb", queries, oracle_every=0)
    b = run_query_batch(small_instance, "peb", queries, oracle_every=0)
    assert a.mean_io == b.mean_io
    assert a.p95_io == b.p95_io


def test_zero_query_spec_writes_header_only(tmp_path):
    out = tmp_path / "empty.csv"
    write_csv([], out)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1
    assert lines[0].split(",") == CSV_COLUMNS


def strip_wall(rows):
    # wall_ms is the one measured-time column; everything else is a pure
    # function of (spec, seed)
    return [{k: v for k, v in row.items() if k != "wall_ms"} for row in rows]


def test_run_experiment_rows_deterministic(tmp_path):
    cfg = replace(SMALL, queries_per_point=8)
    spec = ExperimentSpec(base=cfg, sweeps=("theta",), out_path=str(tmp_path / "a.csv"), oracle_every=4)
    rows_a, ok_a = run_experiment(spec)
    spec_b = ExperimentSpec(base=cfg, sweeps=("theta",), out_path=str(tmp_path / "b.csv"), oracle_every=4)
    rows_b, ok_b = run_experiment(spec_b)
    assert ok_a and ok_b
    assert strip_wall(rows_a) == strip_wall(rows_b)


def test_run_experiment_reports_infeasible_point():
    # theta=1 with group_size <= policies_per_user cannot host the in-group
    # policies; the run keeps going and reports the point as an error row
    cfg = replace(SMALL, group_size=8, policies_per_user=8, queries_per_point=4)
    spec = ExperimentSpec(base=cfg, sweeps=("theta",), oracle_every=0)
    rows, ok = run_experiment(spec)
    errors = [r for r in rows if r["index"] == "error"]
    assert errors
    normal = [r for r in rows if r["index"] != "error"]
    assert normal  # the feasible points still ran


def test_update_rounds_preserve_correctness(small_instance):
    inst = build_instance(replace(SMALL, seed=23))
    for _ in range(5):
        run_update_round(inst)
        inst.peb.tree.audit()
        inst.bx.tree.audit()
    rows = point_rows(inst, oracle_every=3)
    assert all(r["oracle_ok"] == 1.0 for r in rows)
    assert inst.peb.entry_count == SMALL.n_users


def test_sweep_configs_cover_grid():
    base = WorkloadConfig(seed=1)
    assert [c.n_users for c in sweep_configs("users", base)] == [2_000, 5_000, 10_000, 20_000]
    assert [c.theta for c in sweep_configs("theta", base)] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert [c.query_window for c in sweep_configs("window", base)][0] == 100.0
    assert all(c.distribution == "network" for c in sweep_configs("destinations", base))
    with pytest.raises(ValueError):
        sweep_configs("nope", base)


def test_knn_results_match_rules():
    a = PknnResult(((1, 1.0), (2, 2.0)), short=False)
    assert knn_results_match(a, PknnResult(((1, 1.0), (2, 2.0)), short=False))
    # tie at the k'th distance: membership may differ
    assert knn_results_match(
        PknnResult(((1, 1.0), (3, 2.0)), short=False),
        PknnResult(((1, 1.0), (2, 2.0)), short=False),
    )
    # non-tied member differs: mismatch
    assert not knn_results_match(
        PknnResult(((9, 1.0), (2, 2.0)), short=False),
        PknnResult(((1, 1.0), (2, 2.0)), short=False),
    )
    assert not knn_results_match(a, PknnResult(((1, 1.0), (2, 2.5)), short=False))
    assert not knn_results_match(a, PknnResult(((1, 1.0),), short=True))


def test_measure_preprocessing_reports_positive_times():
    rows = measure_preprocessing(replace(SMALL, seed=29), ns=(100, 200), repetitions=1)
    assert [r["N"] for r in rows] == [100, 200]
    assert all(r["seconds"] > 0 for r in rows)


def test_measure_preprocessing_empty_dataset_is_near_zero():
    rows = measure_preprocessing(replace(SMALL, seed=29), ns=(0,), repetitions=1)
    assert rows[0]["seconds"] < 0.01


def test_validate_cost_reports_infeasible_points():
    base = replace(SMALL, queries_per_point=6)
    report = validate_cost(base, fit_ns=(100, 150), thetas=(0.5,), n_ps=(8, 200))
    by_value = {r["value"]: r for r in report.rows if r["param"] == "n_p"}
    assert isinstance(by_value[8]["ratio"], float)
    assert "below the user count" in by_value[200]["ratio"]  # infeasible, reported


def test_linear_fit_r2():
    xs = [1.0, 2.0, 3.0, 4.0]
    assert linear_fit_r2(xs, [2.0, 4.0, 6.0, 8.0]) == pytest.approx(1.0)
    assert linear_fit_r2(xs, [2.1, 3.9, 6.2, 7.9]) > 0.99
    assert linear_fit_r2(xs, [5.0, 1.0, 7.0, 2.0]) < 0.5


def test_load_config_key_value(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("n_users = 400\ntheta=0.25  # sparse groups\n\nquery_window=150\n")
    cfg = load_config(path)
    assert cfg.n_users == 400
    assert cfg.theta == 0.25
    assert cfg.query_window == 150.0
    bad = tmp_path / "bad.cfg"
    bad.write_text("nope=1\n")
    with pytest.raises(ValueError):
        load_config(bad)


# -- CLI ------------------------------------------------------------------------


def test_cli_gen_build_query_round_trip(tmp_path):
    data = tmp_path / "data"
    rc = cli_main(
        [
            "gen",
            "--out-dir",
            str(data),
            "-N",
            "120",
            "--policies",
            "6",
            "--theta",
            "0.5",
            "--group-size",
            "30",
            "--queries",
            "5",
            "--seed",
            "3",
        ]
    )
    assert rc == 0
    for name in ("objects.csv", "policies.csv", "relationships.csv", "queries.csv", "config.txt"):
        assert (data / name).exists()
    snap = tmp_path / "index.snap"
    assert cli_main(["build", "--data-dir", str(data), "--index", "peb", "--snapshot", str(snap)]) == 0
    assert snap.exists()
    assert cli_main(["query", "--data-dir", str(data), "--engine", "peb", "--limit", "4"]) == 0
    assert cli_main(["query", "--data-dir", str(data), "--engine", "oracle", "--limit", "4"]) == 0


def test_cli_bench_writes_csv_and_exits_zero(tmp_path):
    out = tmp_path / "bench.csv"
    rc = cli_main(
        [
            "bench",
            "--seed",
            "5",
            "-N",
            "150",
            "--policies",
            "8",
            "--group-size",
            "30",
            "--queries",
            "6",
            "--sweep",
            "k",
            "--out",
            str(out),
            "--oracle-every",
            "3",
        ]
    )
    assert rc == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 5  # five k values, four rows each
    assert set(rows[0]) == set(CSV_COLUMNS)


def test_cli_bench_requires_seed():
    with pytest.raises(SystemExit):
        cli_main(["bench", "--out", "x.csv"])


def test_cli_entry_point_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "pebtree.cli", "gen", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "--out-dir" in proc.stdout
