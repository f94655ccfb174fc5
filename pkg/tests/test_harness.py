"""Grid driver, CSV/JSON reports, and ordering comparisons."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from peftlab.config import parse_config
from peftlab.counting import backbone_count, count_params, permille
from peftlab.errors import ShapeError
from peftlab.harness import (
    CSV_COLUMNS,
    CellResult,
    aggregate,
    compare_methods,
    read_csv_rows,
    run_experiment,
    win_fraction,
    write_csv,
    write_json,
)

SMALL = """
methods = lora, ssb
ranks = 2
seeds = 0, 1
steps = 60
task.n = 12
task.m = 10
task.planted_rank = 2
task.noise_std = 0.0
"""


def small_report(threads=1, extra=""):
    return run_experiment(parse_config(SMALL + extra), threads=threads)


def fake_rows(metrics, method="m", rank=2):
    return [
        CellResult(
            method=method,
            rank=rank,
            seed=seed,
            params=1,
            permille=1.0,
            final_metric=value,
            wall_ms=0,
        )
        for seed, value in enumerate(metrics)
    ]


class TestRunExperiment:
    def test_grid_shape_and_order(self):
        report = small_report()
        assert len(report.rows) == 4
        keys = [(row.method, row.rank, row.seed) for row in report.rows]
        assert keys == [("lora", 2, 0), ("lora", 2, 1), ("ssb", 2, 0), ("ssb", 2, 1)]
        assert not report.failures

    def test_counts_and_permille_recompute_exactly(self):
        report = small_report()
        dims = ((12, 10),)
        for row in report.rows:
            assert row.params == count_params(row.method, dims, rank=row.rank)
            assert row.permille == permille(row.params, backbone_count(dims))

    def test_training_actually_ran(self):
        report = small_report()
        for row in report.rows:
            assert np.isfinite(row.final_metric)
            assert 0.0 <= row.final_metric < 10.0
            assert row.wall_ms >= 0

    def test_threads_do_not_change_results(self):
        rows1 = small_report(threads=1).rows
        rows3 = small_report(threads=3).rows
        for a, b in zip(rows1, rows3):
            assert (a.method, a.rank, a.seed) == (b.method, b.rank, b.seed)
            assert a.final_metric == b.final_metric

    def test_divergent_cell_recorded_not_raised(self):
        report = small_report(extra="optimizer = sgd\nlr = 1e12\n")
        assert len(report.failures) == 4
        for row in report.failures:
            assert np.isnan(row.final_metric)
            assert "step" in row.error

    def test_classification_cell_end_to_end(self):
        config = parse_config(
            "methods = ssb\nranks = 2\nseeds = 0\nsteps = 120\n"
            "lr = 1e-2\nbatch_size = 256\ntask.kind = classification\n"
        )
        report = run_experiment(config)
        assert report.higher_is_better
        row = report.rows[0]
        assert row.params == 1028
        assert 0.0 <= row.final_metric <= 1.0
        # the pretrained-and-tuned model must beat chance comfortably
        assert row.final_metric > 0.7


class TestCsvAndJson:
    def test_csv_columns_and_roundtrip(self, tmp_path):
        report = small_report()
        path = tmp_path / "results.csv"
        write_csv(report, path)
        header = path.read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)
        rows = read_csv_rows(path)
        assert [(r.method, r.rank, r.seed) for r in rows] == [
            (r.method, r.rank, r.seed) for r in report.rows
        ]
        for loaded, original in zip(rows, report.rows):
            assert loaded.final_metric == original.final_metric
            assert loaded.permille == original.permille
            assert loaded.wall_ms == 0  # placeholder keeps reruns byte-identical

    def test_csv_byte_determinism(self, tmp_path):
        for name, threads in (("a.csv", 1), ("b.csv", 4)):
            write_csv(small_report(threads=threads), tmp_path / name)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_failed_cell_round_trips_as_nan(self, tmp_path):
        report = small_report(extra="optimizer = sgd\nlr = 1e12\n")
        path = tmp_path / "failed.csv"
        write_csv(report, path)
        rows = read_csv_rows(path)
        assert all(np.isnan(r.final_metric) for r in rows)
        assert all(r.error for r in rows)

    def test_json_report_contents(self, tmp_path):
        report = small_report()
        path = tmp_path / "report.json"
        write_json(report, path)
        payload = json.loads(path.read_text())
        assert payload["config"]["methods"] == ["lora", "ssb"]
        assert len(payload["rows"]) == 4
        assert payload["failures"] == []
        aggregates = {(a["method"], a["rank"]): a for a in payload["aggregates"]}
        assert aggregates[("lora", 2)]["seeds"] == 2
        assert aggregates[("lora", 2)]["stderr"] is not None

    def test_rejects_foreign_csv(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ShapeError):
            read_csv_rows(path)


class TestAggregateAndCompare:
    def test_aggregate_hand_values(self):
        rows = fake_rows([1.0, 3.0])
        stats = aggregate(rows)[("m", 2)]
        assert stats["mean"] == 2.0
        assert_allclose(stats["stderr"], np.std([1, 3], ddof=1) / np.sqrt(2))

    def test_aggregate_single_seed_has_no_stderr(self):
        stats = aggregate(fake_rows([4.0]))[("m", 2)]
        assert stats["stderr"] is None

    def test_win_fraction_hand_values(self):
        assert win_fraction([1, 1, 1], [2, 2, 2]) == 1.0
        assert win_fraction([1, 3], [2, 2]) == 0.5
        assert win_fraction([1, 2], [1, 2]) == 0.5  # all ties
        assert win_fraction([2], [1], higher_is_better=True) == 1.0
        with pytest.raises(ShapeError):
            win_fraction([1], [1, 2])

    def test_compare_orders_by_mean(self):
        rows = fake_rows([1.0, 2.0], method="good") + fake_rows(
            [3.0, 4.0], method="bad"
        )
        out = compare_methods(rows)
        ranking = [entry["method"] for entry in out[2]["ranking"]]
        assert ranking == ["good", "bad"]
        assert out[2]["wins"][0] == {"pair": ("good", "bad"), "fraction": 1.0}

    def test_compare_accuracy_direction(self):
        rows = fake_rows([0.9, 0.8], method="high") + fake_rows(
            [0.5, 0.6], method="low"
        )
        out = compare_methods(rows, higher_is_better=True)
        assert out[2]["ranking"][0]["method"] == "high"
        assert out[2]["wins"][0]["fraction"] == 1.0

    def test_mismatched_cells_rejected(self):
        rows = fake_rows([1.0, 2.0], method="a") + fake_rows([1.0], method="b")
        with pytest.raises(ShapeError, match="mismatched"):
            compare_methods(rows)

    def test_failed_rows_excluded_from_aggregate(self):
        rows = fake_rows([1.0, 2.0])
        rows[1].error = "non-finite loss at step 3"
        assert aggregate(rows)[("m", 2)]["seeds"] == 1
