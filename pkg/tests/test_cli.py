import hashlib
import json
import subprocess
import sys

import pytest

from grnas import tensor_io
from grnas.cli import main, read_history_csv
from grnas.search import Genotype, SearchSpaceConfig, genotype_param_count


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


TINY_TASK = {
    "n_train": 48,
    "n_val": 48,
    "n_test": 48,
    "channels": 8,
    "length": 4,
    "seed": 3,
}
TINY_SPACE = {"channels": 8, "length": 4, "k_samples": 8, "lam": 0.5}
TINY_SCHED = {"epochs": 3, "batch_size": 8}
TINY_RETRAIN = {"epochs": 5, "batch_size": 16}


class TestConfigHandling:
    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "c.json", {"trails": 100})
        assert main(["estimator-bench", "--config", cfg, "--out-dir", str(tmp_path)]) == 2
        assert "unknown keys" in capsys.readouterr().err

    def test_invalid_json_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["estimator-bench", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["search", "--config", str(tmp_path / "absent.json"), "--out-dir", str(tmp_path)]) == 2

    def test_invalid_value_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"trials": 1})
        assert main(["estimator-bench", "--config", cfg, "--out-dir", str(tmp_path)]) == 2

    def test_nested_unknown_key_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"task": {"n_trainn": 10}})
        assert main(["search", "--config", cfg, "--out-dir", str(tmp_path)]) == 2


class TestGenData:
    def test_writes_valid_files_with_manifest(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"task": TINY_TASK, "prefix": "toy"})
        out = tmp_path / "out"
        assert main(["gen-data", "--config", cfg, "--out-dir", str(out)]) == 0
        arr = tensor_io.read_tensor(out / "toy_train_modality_a.grnt")
        assert arr.shape == (48, 8, 4)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        for fname, digest in manifest["outputs"].items():
            assert sha(out / fname) == digest

    def test_deterministic_bytes(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"task": TINY_TASK})
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        main(["gen-data", "--config", cfg, "--out-dir", str(out1)])
        main(["gen-data", "--config", cfg, "--out-dir", str(out2)])
        name = "synthetic_test_modality_b.grnt"
        assert sha(out1 / name) == sha(out2 / name)


class TestEstimatorBench:
    CFG = {
        "lambdas": [0.5],
        "k_grid": [5, 20],
        "trials": 4000,
        "n_categories": 3,
        "objectives": ["linear"],
        "seed": 11,
    }

    def test_rows_and_checks(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", self.CFG)
        out = tmp_path / "bench"
        assert main(["estimator-bench", "--config", cfg, "--out-dir", str(out)]) == 0
        lines = (out / "estimator_bench.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:8] == ["estimator", "lambda", "K", "trials", "seed", "bias_sq", "variance", "mse"]
        assert len(lines) == 1 + 1 + 2  # header + stgs baseline + two grmc rows
        grmc_rows = [l for l in lines[1:] if l.startswith("grmc")]
        assert all(",true," in l for l in grmc_rows)  # ordering + mean checks pass

    def test_byte_for_byte_determinism(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", self.CFG)
        out1, out2 = tmp_path / "b1", tmp_path / "b2"
        main(["estimator-bench", "--config", cfg, "--out-dir", str(out1)])
        main(["estimator-bench", "--config", cfg, "--out-dir", str(out2)])
        assert sha(out1 / "estimator_bench.csv") == sha(out2 / "estimator_bench.csv")

    def test_threads_do_not_change_output(self, tmp_path):
        cfg = write_config(
            tmp_path, "c.json", dict(self.CFG, objectives=["linear", "quadratic"])
        )
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        main(["estimator-bench", "--config", cfg, "--out-dir", str(out1), "--threads", "1"])
        main(["estimator-bench", "--config", cfg, "--out-dir", str(out2), "--threads", "4"])
        assert sha(out1 / "estimator_bench.csv") == sha(out2 / "estimator_bench.csv")

    def test_degenerate_trials_flagged_unreliable(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", dict(self.CFG, trials=2))
        out = tmp_path / "b"
        assert main(["estimator-bench", "--config", cfg, "--out-dir", str(out)]) == 0
        lines = (out / "estimator_bench.csv").read_text().strip().split("\n")
        assert all(l.endswith(",false") for l in lines[1:])  # ci_reliable column

    def test_assertion_failure_exits_3(self, tmp_path, monkeypatch, capsys):
        import grnas.cli as cli_mod

        real = cli_mod.estimator_stats

        def rigged(obj, theta, config, trials, rng):
            stats = real(obj, theta, config, trials, rng)
            if config.kind == "grmc":
                stats.trace_variance = 1e9  # force the ordering check to fail
            return stats

        monkeypatch.setattr(cli_mod, "estimator_stats", rigged)
        cfg = write_config(tmp_path, "c.json", dict(self.CFG, k_grid=[5]))
        assert main(["estimator-bench", "--config", cfg, "--out-dir", str(tmp_path / "b3")]) == 3
        assert "variance ordering failed" in capsys.readouterr().err


@pytest.fixture(scope="module")
def search_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_search")
    cfg = write_config(
        tmp_path,
        "c.json",
        {
            "task": TINY_TASK,
            "space": TINY_SPACE,
            "schedule": TINY_SCHED,
            "retrain": TINY_RETRAIN,
            "seed": 5,
        },
    )
    out = tmp_path / "run"
    code = main(["search", "--config", cfg, "--out-dir", str(out)])
    return code, cfg, out, tmp_path


class TestSearchCommand:
    def test_outputs_exist(self, search_run):
        code, _, out, _ = search_run
        assert code == 0
        for name in ("entropy.csv", "genotype.json", "search.ckpt", "manifest.json"):
            assert (out / name).exists(), name

    def test_genotype_round_trips(self, search_run):
        _, _, out, _ = search_run
        g = Genotype.from_json((out / "genotype.json").read_text())
        assert g.entropy_history_ref == "entropy.csv"
        assert len(g.cells) == 4

    def test_entropy_csv_round_trips(self, search_run):
        _, _, out, _ = search_run
        records = read_history_csv(out / "entropy.csv")
        assert len(records) == 3
        rewritten = [r.as_row() for r in records]
        raw = (out / "entropy.csv").read_text().strip().split("\n")[1:]
        for row, line in zip(rewritten, raw):
            assert [repr(v) for v in row[1:]] == line.split(",")[1:]

    def test_manifest_digests_match(self, search_run):
        _, _, out, _ = search_run
        manifest = json.loads((out / "manifest.json").read_text())
        for fname, digest in manifest["outputs"].items():
            assert sha(out / fname) == digest

    def test_repeat_run_byte_identical(self, search_run):
        _, cfg, out, tmp_path = search_run
        out2 = tmp_path / "run2"
        assert main(["search", "--config", cfg, "--out-dir", str(out2)]) == 0
        assert sha(out / "genotype.json") == sha(out2 / "genotype.json")
        assert sha(out / "entropy.csv") == sha(out2 / "entropy.csv")

    def test_eval_command_reports(self, search_run):
        _, cfg, out, tmp_path = search_run
        out_eval = tmp_path / "eval"
        code = main(
            [
                "eval",
                "--config", cfg.replace("c.json", "e.json"),
                "--genotype", str(out / "genotype.json"),
                "--out-dir", str(out_eval),
            ]
        )
        assert code == 2  # eval config does not accept schedule section

    def test_eval_with_proper_config(self, search_run, tmp_path_factory):
        _, _, out, tmp_path = search_run
        cfg = write_config(
            tmp_path,
            "eval.json",
            {"task": TINY_TASK, "space": TINY_SPACE, "retrain": TINY_RETRAIN, "seed": 5},
        )
        out_eval = tmp_path / "eval2"
        code = main(
            ["eval", "--config", cfg, "--genotype", str(out / "genotype.json"), "--out-dir", str(out_eval)]
        )
        assert code == 0
        metrics = json.loads((out_eval / "metrics.json").read_text())
        assert 0.0 <= metrics["auc"] <= 1.0
        g = Genotype.from_json((out / "genotype.json").read_text())
        space = SearchSpaceConfig(**TINY_SPACE)
        assert metrics["param_count"] == genotype_param_count(g, space)
        assert metrics["analytic_param_count"] == metrics["param_count"]
        conf = metrics["confusion"]
        total = conf["tp"] + conf["fp"] + conf["tn"] + conf["fn"]
        assert total == TINY_TASK["n_test"]

    def test_resume_matches_uninterrupted(self, search_run):
        _, _, out, tmp_path = search_run
        short_cfg = write_config(
            tmp_path,
            "short.json",
            {
                "task": TINY_TASK,
                "space": TINY_SPACE,
                "schedule": dict(TINY_SCHED, epochs=1),
                "retrain": TINY_RETRAIN,
                "seed": 5,
            },
        )
        full_cfg = write_config(
            tmp_path,
            "full.json",
            {
                "task": TINY_TASK,
                "space": TINY_SPACE,
                "schedule": TINY_SCHED,
                "retrain": TINY_RETRAIN,
                "seed": 5,
            },
        )
        out_short = tmp_path / "short"
        out_resumed = tmp_path / "resumed"
        assert main(["search", "--config", short_cfg, "--out-dir", str(out_short)]) == 0
        assert (
            main(
                [
                    "search",
                    "--config", full_cfg,
                    "--out-dir", str(out_resumed),
                    "--resume", str(out_short / "search.ckpt"),
                ]
            )
            == 0
        )
        assert sha(out_resumed / "genotype.json") == sha(out / "genotype.json")
        assert sha(out_resumed / "entropy.csv") == sha(out / "entropy.csv")


class TestAblationCommand:
    def test_grid_outputs(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "c.json",
            {
                "task": TINY_TASK,
                "space": TINY_SPACE,
                "schedule": {"epochs": 2, "batch_size": 8},
                "retrain": {"epochs": 3, "batch_size": 16},
                "lambdas": [0.5, 1.0],
                "k_grid": [4, 8],
                "seed": 2,
            },
        )
        out = tmp_path / "abl"
        assert main(["ablation", "--config", cfg, "--out-dir", str(out), "--threads", "2"]) == 0
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 4  # header + 2x2 grid
        for line in lines[1:]:
            fname = line.split(",")[-1]
            g = Genotype.from_json((out / fname).read_text())
            assert g.cells  # parses and is non-empty
        observations = json.loads((out / "observations.json").read_text())
        assert len(observations) == 2
        assert all("param_count_trend" in o for o in observations)

    def test_single_cell_grid(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "c.json",
            {
                "task": TINY_TASK,
                "space": TINY_SPACE,
                "schedule": {"epochs": 1, "batch_size": 8},
                "retrain": {"epochs": 2, "batch_size": 16},
                "lambdas": [0.5],
                "k_grid": [4],
                "seed": 2,
            },
        )
        out = tmp_path / "abl1"
        assert main(["ablation", "--config", cfg, "--out-dir", str(out)]) == 0
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert len(lines) == 2


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": TINY_TASK}))
    proc = subprocess.run(
        [sys.executable, "-m", "grnas.cli", "gen-data", "--config", str(cfg), "--out-dir", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "gen-data" in proc.stdout
