import csv
import json

import numpy as np
import pytest

from lokf.cli import main
from lokf.config import ConfigError, RunConfig, config_from_dict, load_config
from lokf.data import write_dataset_csv
from lokf.filters import global_kf
from lokf.lasso import FitOptions
from lokf.simlab import gen_hetero


class TestConfig:
    def test_unknown_method(self):
        with pytest.raises(ConfigError, match="methods"):
            config_from_dict({"methods": ["alkf", "cowboy"]})

    def test_alpha_bounds(self):
        with pytest.raises(ConfigError, match="alpha"):
            config_from_dict({"alpha": 1.5})

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown field"):
            config_from_dict({"powertools": 1})

    def test_scenario_defaults(self):
        cfg = config_from_dict({"scenario": "blocks"}).resolved()
        assert cfg.c_main == 0.25
        assert cfg.prescreen is True
        assert cfg.score_path == "batch"
        cfg = config_from_dict({"scenario": "hetero"}).resolved()
        assert cfg.c_main == 1.0
        assert cfg.prescreen is False
        assert cfg.score_path == "local"

    def test_explicit_overrides_survive_resolution(self):
        cfg = config_from_dict({"scenario": "hetero",
                                "c_main": 0.5}).resolved()
        assert cfg.c_main == 0.5

    def test_load_toml_and_json(self, tmp_path):
        toml = tmp_path / "cfg.toml"
        toml.write_text('scenario = "hetero"\nalpha = 0.2\n'
                        'methods = ["global_kf"]\nn = [200]\n')
        cfg = load_config(toml)
        assert cfg.alpha == 0.2
        assert cfg.methods == ("global_kf",)
        jsonf = tmp_path / "cfg.json"
        jsonf.write_text(json.dumps({"scenario": "transfer",
                                     "replicates": 2}))
        cfg = load_config(jsonf)
        assert cfg.scenario == "transfer"
        assert cfg.replicates == 2


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSimulateCommand:
    def test_smoke_single_record(self, tmp_path):
        out = tmp_path / "run"
        code = main(["simulate", "--scenario", "hetero", "--methods",
                     "global_kf", "--n", "200", "--replicates", "1",
                     "--master-seed", "3", "--lambda-grid-size", "15",
                     "--cv-folds", "3", "--output-dir", str(out)])
        assert code == 0
        rows = read_csv(out / "replicates.csv")
        assert len(rows) == 2
        assert rows[0][0] == "method"
        assert rows[1][0] == "global_kf"
        agg = read_csv(out / "aggregate.csv")
        assert len(agg) == 1 + 4
        snap = json.loads((out / "config_snapshot.json").read_text())
        assert snap["scenario"] == "hetero"
        assert snap["score_path"] == "local"

    def test_rerun_identical_outputs(self, tmp_path):
        args = ["simulate", "--scenario", "hetero", "--methods",
                "global_kf,fixed_lkf", "--n", "200", "--replicates", "2",
                "--master-seed", "9", "--lambda-grid-size", "15",
                "--cv-folds", "3"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--output-dir", str(out1)]) == 0
        assert main(args + ["--output-dir", str(out2)]) == 0
        assert (out1 / "aggregate.csv").read_bytes() == \
            (out2 / "aggregate.csv").read_bytes()
        snap1 = json.loads((out1 / "config_snapshot.json").read_text())
        snap2 = json.loads((out2 / "config_snapshot.json").read_text())
        snap1.pop("output_dir")
        snap2.pop("output_dir")
        assert snap1 == snap2
        # replicate records identical except the wall-time column
        a = read_csv(out1 / "replicates.csv")
        b = read_csv(out2 / "replicates.csv")
        drop = a[0].index("runtime_ms")
        for ra, rb in zip(a, b):
            assert ra[:drop] == rb[:drop]

    def test_snapshot_round_trip(self, tmp_path):
        out1 = tmp_path / "a"
        assert main(["simulate", "--scenario", "hetero", "--methods",
                     "global_kf", "--n", "200", "--replicates", "1",
                     "--master-seed", "4", "--lambda-grid-size", "15",
                     "--cv-folds", "3", "--output-dir", str(out1)]) == 0
        out2 = tmp_path / "b"
        snap = tmp_path / "snap.json"
        snap.write_bytes((out1 / "config_snapshot.json").read_bytes())
        assert main(["simulate", "--config", str(snap), "--output-dir",
                     str(out2)]) == 0
        assert (out1 / "aggregate.csv").read_bytes() == \
            (out2 / "aggregate.csv").read_bytes()

    def test_unknown_method_exit_2(self, tmp_path, capsys):
        code = main(["simulate", "--methods", "nosuch", "--output-dir",
                     str(tmp_path / "x")])
        assert code == 2
        assert "methods" in capsys.readouterr().err

    def test_bad_config_file_field(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("alpha = 2.0\n")
        code = main(["simulate", "--config", str(cfg)])
        assert code == 2
        assert "alpha" in capsys.readouterr().err

    def test_threads_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LOKF_THREADS", "2")
        out = tmp_path / "env"
        code = main(["simulate", "--scenario", "hetero", "--methods",
                     "global_kf", "--n", "200", "--replicates", "1",
                     "--master-seed", "3", "--lambda-grid-size", "15",
                     "--cv-folds", "3", "--output-dir", str(out)])
        assert code == 0
        snap = json.loads((out / "config_snapshot.json").read_text())
        assert snap["threads"] == 2


class TestAnalyzeCommand:
    def test_round_trip_matches_in_process(self, tmp_path):
        data = gen_hetero(300, seed=21)
        csv_path = tmp_path / "data.csv"
        write_dataset_csv(data.bundle, csv_path)
        out = tmp_path / "analysis"
        code = main(["analyze", str(csv_path), "--method", "global_kf",
                     "--alpha", "0.2", "--seed", "77", "--config",
                     str(_fast_cfg(tmp_path)), "--output-dir", str(out)])
        assert code == 0
        direct = global_kf(data.bundle, 0.2, seed=77,
                           opts=FitOptions(cv_folds=3, grid_size=15))
        rows = read_csv(out / "discoveries.csv")
        got = {(int(r[0]) - 1, int(r[2])) for r in rows[1:]}
        expect = {(h.variable, h.label) for h in direct.rejected}
        assert got == expect
        part = json.loads((out / "partition.json").read_text())
        assert len(part) == 20

    def test_loose_alpha_rejects_positives(self, tmp_path):
        data = gen_hetero(300, seed=22)
        csv_path = tmp_path / "data.csv"
        write_dataset_csv(data.bundle, csv_path)
        out = tmp_path / "analysis"
        code = main(["analyze", str(csv_path), "--method", "global_kf",
                     "--alpha", "0.999", "--config",
                     str(_fast_cfg(tmp_path)), "--output-dir", str(out)])
        assert code == 0
        direct = global_kf(data.bundle, 0.999, seed=0,
                           opts=FitOptions(cv_folds=3, grid_size=15))
        w = direct.stats.w
        expect = int(np.sum(w >= np.min(np.abs(w[w != 0]))))
        rows = read_csv(out / "discoveries.csv")
        assert len(rows) - 1 == expect

    def test_malformed_row_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,x1,xk1\n1.0,2.0,3.0\n1.0,2.0\n")
        code = main(["analyze", str(bad), "--method", "global_kf"])
        assert code == 2
        assert "line 3" in capsys.readouterr().err

    def test_missing_knockoffs_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,x1,z1\n1.0,2.0,3.0\n")
        code = main(["analyze", str(bad), "--method", "global_kf"])
        assert code == 2
        assert "knockoff" in capsys.readouterr().err

    def test_robust_csv_has_extra_columns(self, tmp_path):
        data = gen_hetero(300, seed=23)
        csv_path = tmp_path / "data.csv"
        write_dataset_csv(data.bundle, csv_path)
        out = tmp_path / "analysis"
        code = main(["analyze", str(csv_path), "--method", "robust_alkf",
                     "--alpha", "0.3", "--config",
                     str(_fast_cfg(tmp_path)), "--output-dir", str(out)])
        assert code == 0
        rows = read_csv(out / "discoveries.csv")
        assert rows[0][-2:] == ["r", "p_value"]


class TestDiagnoseCommand:
    def test_copy_knockoffs_all_zero_stats(self, tmp_path, capsys):
        data = gen_hetero(200, seed=24)
        b = data.bundle
        from lokf.data import DataBundle
        copy = DataBundle(b.x, b.x, b.y, b.z)
        path = tmp_path / "copy.csv"
        write_dataset_csv(copy, path)
        out_csv = tmp_path / "diag.csv"
        code = main(["diagnose-knockoffs", str(path), "--out",
                     str(out_csv)])
        assert code == 0
        rows = read_csv(out_csv)
        assert all(float(r[1]) == 0.0 and float(r[3]) == 1.0
                   for r in rows[1:])

    def test_column_out_of_range_exit_2(self, tmp_path, capsys):
        data = gen_hetero(100, seed=25)
        path = tmp_path / "d.csv"
        write_dataset_csv(data.bundle, path)
        code = main(["diagnose-knockoffs", str(path), "--column", "99"])
        assert code == 2
        assert "column" in capsys.readouterr().err

    def test_valid_knockoffs_mostly_pass(self, tmp_path, capsys):
        data = gen_hetero(2000, seed=26)
        path = tmp_path / "d.csv"
        write_dataset_csv(data.bundle, path)
        out_csv = tmp_path / "diag.csv"
        code = main(["diagnose-knockoffs", str(path), "--out",
                     str(out_csv)])
        assert code == 0
        rows = read_csv(out_csv)
        pvals = [float(r[3]) for r in rows[1:]]
        flagged = sum(p < 0.01 for p in pvals)
        assert flagged <= max(1, int(0.05 * len(pvals)))


def _fast_cfg(tmp_path):
    path = tmp_path / "fast.toml"
    if not path.exists():
        path.write_text("lambda_grid_size = 15\ncv_folds = 3\n")
    return path
