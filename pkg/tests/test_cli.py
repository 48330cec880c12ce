import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from scbf.cli import ROUNDS_COLUMNS, main
from scbf.config import ExperimentConfig, dump_config, load_config, parse_config
from scbf.exceptions import ConfigError

SMALL = {
    "global_loops": 3,
    "n_clients": 3,
    "net": {"layer_sizes": [6, 4, 1]},
    "data": {"synthetic": {"n_rows": 300, "n_features": 8, "sparsity": 0.3}},
}


def write_config(tmp_path, **overrides):
    raw = {**SMALL, "out_dir": str(tmp_path / "out"), **overrides}
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def drop_seconds(rows):
    return [r[:-1] for r in rows]


class TestConfig:
    def test_defaults(self):
        (config,) = parse_config({})
        assert config.method == "scbf" and config.layer_sizes == (32, 16, 1)
        assert config.hyper.learning_rate == 0.1 and config.data.n_rows == 2000

    def test_theta_required_for_pruning(self):
        with pytest.raises(ConfigError, match="theta"):
            parse_config({"methods": ["scbf_prune"]})

    def test_theta_rejected_without_pruning(self):
        with pytest.raises(ConfigError, match="theta"):
            parse_config({"methods": ["scbf"], "theta": 0.1, "theta_total": 0.4})

    def test_theta_only_reaches_pruning_methods(self):
        configs = parse_config({"methods": ["scbf", "scbf_prune"], "theta": 0.1, "theta_total": 0.4})
        assert configs[0].theta is None and configs[1].theta == 0.1

    @pytest.mark.parametrize(
        "raw, field",
        [
            ({"alpha": 0.0}, "alpha"),
            ({"alpha": 1.5}, "alpha"),
            ({"methods": ["sgd"]}, "method"),
            ({"selection_mode": "sideways"}, "selection_mode"),
            ({"global_loops": -1}, "global_loops"),
            ({"net": {"layer_sizes": [4, 2]}}, "layer_sizes"),
            ({"hyper": {"learning_rate": 0}}, "learning_rate"),
            ({"hyper": {"momentum": 0.9}}, "hyper"),
            ({"bogus": 1}, "bogus"),
            ({"data": {"csv": "a.csv", "synthetic": {}}}, "data"),
        ],
    )
    def test_field_level_errors(self, raw, field):
        with pytest.raises(ConfigError, match=field):
            parse_config(raw)

    def test_per_method_overrides(self):
        configs = parse_config({"methods": ["scbf", {"method": "scbf", "alpha": 0.5, "selection_mode": "negative"}]})
        assert (configs[0].alpha, configs[1].alpha) == (0.1, 0.5)
        assert configs[1].selection_mode == "negative"

    def test_relative_csv_resolved(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("data: {csv: data/x.csv}\n")
        (config,) = load_config(path)
        assert Path(config.data.csv) == tmp_path / "data" / "x.csv"

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.sampled_from(["scbf", "scbf_prune", "fedavg", "fedavg_prune"]), min_size=1, max_size=4),
        st.floats(0.01, 1.0),
        st.sampled_from(["positive", "negative"]),
        st.integers(0, 50),
        st.integers(0, 2**31),
        st.booleans(),
    )
    def test_round_trip(self, methods, alpha, mode, loops, seed, use_csv):
        raw = {
            "methods": methods,
            "alpha": alpha,
            "selection_mode": mode,
            "global_loops": loops,
            "seed": seed,
            "data": {"csv": "/data/cohort.csv"} if use_csv else {"synthetic": {"n_rows": 500}},
        }
        if any(m.endswith("prune") for m in methods):
            raw.update(theta=0.1, theta_total=0.47)
        configs = parse_config(raw)
        again = parse_config(yaml.safe_load(dump_config(configs)))
        assert again == configs


class TestRun:
    def test_zero_loops_header_only(self, tmp_path):
        path = write_config(tmp_path, global_loops=0)
        assert main(["run", str(path)]) == 0
        assert read_rows(tmp_path / "out" / "rounds.csv") == [list(ROUNDS_COLUMNS)]

    def test_rows_and_determinism(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["run", str(path), "--out-dir", str(tmp_path / "a")]) == 0
        assert main(["run", str(path), "--out-dir", str(tmp_path / "b"), "--jobs", "3"]) == 0
        a = read_rows(tmp_path / "a" / "rounds.csv")
        b = read_rows(tmp_path / "b" / "rounds.csv")
        assert a[0] == list(ROUNDS_COLUMNS)
        assert len(a) == 1 + 3
        assert drop_seconds(a) == drop_seconds(b)

    def test_overrides(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["run", str(path), "--loops", "2", "--seed", "5"]) == 0
        assert len(read_rows(tmp_path / "out" / "rounds.csv")) == 3
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["global_loops"] == 2

    def test_paired_summary_has_savings(self, tmp_path):
        path = write_config(tmp_path, methods=["scbf", "fedavg"], alpha=0.1)
        assert main(["run", str(path)]) == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["baseline"] == "fedavg"
        assert summary["comm_savings"]["scbf"] > 0
        assert (tmp_path / "out" / "scbf" / "rounds.csv").exists()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path, alpha=2.0)
        assert main(["run", str(path)]) == 2
        assert "alpha" in capsys.readouterr().err

    def test_runtime_failure_keeps_partial_rows(self, tmp_path, monkeypatch):
        import scbf.federation as fed

        original = fed._evaluate
        calls = {"n": 0}

        def flaky(params, cohort):
            calls["n"] += 1
            if calls["n"] == 3:
                raise RuntimeError("boom")
            return original(params, cohort)

        monkeypatch.setattr(fed, "_evaluate", flaky)
        path = write_config(tmp_path, global_loops=5)
        assert main(["run", str(path)]) == 1
        rows = read_rows(tmp_path / "out" / "rounds.csv")
        assert len(rows) == 1 + 2

    def test_csv_data_source(self, tmp_path):
        lines = ["a,b,c,label"] + [f"{i % 2},{(i // 2) % 2},{(i // 3) % 2},{int(i % 2 or i % 5 == 0)}" for i in range(60)]
        (tmp_path / "cohort.csv").write_text("\n".join(lines) + "\n")
        raw = {**SMALL, "data": {"csv": "cohort.csv"}, "out_dir": str(tmp_path / "out")}
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(raw))
        assert main(["run", str(tmp_path / "c.yaml")]) == 0
        assert len(read_rows(tmp_path / "out" / "rounds.csv")) == 4


class TestCompare:
    def test_needs_two_methods(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["compare", str(path)]) == 2

    def test_identical_entries(self, tmp_path):
        path = write_config(tmp_path, methods=["scbf", "scbf"])
        assert main(["compare", str(path)]) == 0
        rows = read_rows(tmp_path / "out" / "compare.csv")
        header = rows[0]
        for col in ("auc_roc", "auc_pr", "uploaded_params", "cumulative_uploaded", "pruned_total"):
            i, j = header.index(f"scbf_{col}"), header.index(f"scbf_2_{col}")
            assert [r[i] for r in rows[1:]] == [r[j] for r in rows[1:]]

    def test_four_methods(self, tmp_path):
        path = write_config(
            tmp_path, methods=["scbf", "scbf_prune", "fedavg", "fedavg_prune"], theta=0.2, theta_total=0.4
        )
        assert main(["compare", str(path)]) == 0
        rows = read_rows(tmp_path / "out" / "compare.csv")
        assert len(rows) == 1 + 3
        assert len(rows[0]) == 1 + 4 * (len(ROUNDS_COLUMNS) - 1)
        assert all(len(r) == len(rows[0]) for r in rows)


def test_module_entry_point(tmp_path):
    path = write_config(tmp_path, global_loops=1)
    env = {**os.environ, "SCBF_LOG_LEVEL": "INFO"}
    proc = subprocess.run(
        [sys.executable, "-m", "scbf", "run", str(path)], capture_output=True, text=True, env=env
    )
    assert proc.returncode == 0, proc.stderr
    assert "loop 1" in proc.stderr
    assert json.loads(proc.stdout)["global_loops"] == 1
