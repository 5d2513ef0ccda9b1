import dataclasses
import hashlib
import json
import math
from pathlib import Path

import pytest

from influcast.cascades import dump_cascades
from influcast.cli import main
from influcast.config import (ExperimentConfig, load_config, parse_toml,
                              serialize)
from influcast.errors import ConfigError
from influcast.pipeline import Profile, run_synthetic_experiment
from influcast.synth import SynthConfig


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig(seed=7, out_dir="x/y")
        cfg.synth.n_nodes = 123
        cfg.train.alpha = 0.4
        cfg.train.lam = 0.005
        cfg.grid.k = [2, 3]
        cfg.baselines.uniform_ps = [0.5]
        assert parse_toml(serialize(cfg)) == cfg

    def test_default_round_trip(self):
        cfg = ExperimentConfig()
        assert parse_toml(serialize(cfg)) == cfg

    def test_lambda_alias(self):
        cfg = parse_toml("[train]\nlambda = 0.015\n")
        assert cfg.train.lam == 0.015

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_toml("[train]\nbogus = 1\n")
        with pytest.raises(ConfigError):
            parse_toml("[nosuch]\nx = 1\n")

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/config.toml")


def small_corpus(tmp_path, n_cascades=400, seed=5):
    """Write a small synthetic corpus to disk, return the paths."""
    prof = Profile(name="t", synth=SynthConfig(
        n_nodes=60, edges_per_node=4, k=3, lam=0.05,
        influence_range=(0.2, 0.5), susceptibility_range=(0.8, 1.5),
        n_cascades=n_cascades, n_sources=15, seed=seed), max_epochs=30)
    run = run_synthetic_experiment(prof)
    train_path = tmp_path / "train.jsonl"
    test_path = tmp_path / "test.jsonl"
    with train_path.open("w") as fp:
        dump_cascades(run.train_log, fp)
    with test_path.open("w") as fp:
        dump_cascades(run.test_log, fp)
    truth_path = tmp_path / "truth.json"
    truth_path.write_text(json.dumps(run.truth.to_dict()))
    return run, train_path, test_path, truth_path


class TestGenerateCommand:
    def test_writes_corpus(self, tmp_path):
        out = tmp_path / "gen"
        code = main(["generate", "--out", str(out), "--seed", "3", "--n-nodes", "40",
                     "--edges-per-node", "3", "--k", "2", "--cascades", "60",
                     "--sources", "8"])
        assert code == 0
        for name in ("network.json", "truth_model.json", "cascades.jsonl",
                     "network_shuffled.json", "cascades_shuffled.jsonl"):
            assert (out / name).exists(), name

    def test_zero_cascades_networks_and_model_only(self, tmp_path):
        out = tmp_path / "gen0"
        assert main(["generate", "--out", str(out), "--seed", "3", "--n-nodes", "40",
                     "--edges-per-node", "3", "--k", "2", "--cascades", "0"]) == 0
        assert (out / "network.json").exists()
        assert (out / "truth_model.json").exists()
        assert not (out / "cascades.jsonl").exists()

    def test_byte_identical_reruns(self, tmp_path):
        args = ["generate", "--seed", "11", "--n-nodes", "40", "--edges-per-node", "3",
                "--k", "2", "--cascades", "50", "--sources", "6"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        for name in ("network.json", "truth_model.json", "cascades.jsonl",
                     "network_shuffled.json", "cascades_shuffled.jsonl"):
            assert file_hash(out1 / name) == file_hash(out2 / name), name

    def test_invalid_config_exit_code(self, tmp_path):
        assert main(["generate", "--out", str(tmp_path), "--n-nodes", "3",
                     "--edges-per-node", "5"]) == 2


class TestTrainCommand:
    def test_trains_and_writes_artifacts(self, tmp_path):
        _, train_path, _, _ = small_corpus(tmp_path)
        out = tmp_path / "model"
        code = main(["train", "--cascades", str(train_path), "--out", str(out),
                     "--k", "3", "--lam", "0.05", "--max-epochs", "10"])
        assert code == 0
        model = json.loads((out / "model.json").read_text())
        assert set(model) == {"lambda", "k", "nodes", "I", "S"}
        trace = (out / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "epoch,loss,step_size"
        assert len(trace) == 12  # header + init + 10 epochs
        assert (out / "loss_curve.png").exists()
        assert (out / "diagnostics.json").exists()

    def test_empty_log_is_data_error(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text('{"mid":"m","events":[{"parent":null,"child":"a","t":0}]}\n')
        assert main(["train", "--cascades", str(empty), "--out", str(tmp_path / "x")]) == 3

    def test_missing_file_is_data_error(self, tmp_path):
        assert main(["train", "--cascades", str(tmp_path / "nope.jsonl"),
                     "--out", str(tmp_path / "x")]) == 3

    def test_grid_mode(self, tmp_path):
        _, train_path, _, _ = small_corpus(tmp_path, n_cascades=150)
        out = tmp_path / "grid"
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[grid]\nalpha = [0.5, 1.0]\nlambda = [0.05]\nk = [2]\n"
                       "[train]\nmax_epochs = 3\n")
        assert main(["train", "--cascades", str(train_path), "--out", str(out),
                     "--config", str(cfg), "--grid"]) == 0
        rows = (out / "grid_summary.csv").read_text().splitlines()
        assert len(rows) == 3  # header + 2 cells
        assert (out / "model_a0.5_l0.05_k2.json").exists()
        assert (out / "model_a1_l0.05_k2.json").exists()


class TestEvaluateCommand:
    def test_uniform_method(self, tmp_path):
        _, train_path, test_path, truth_path = small_corpus(tmp_path)
        out = tmp_path / "eval_un"
        code = main(["evaluate", "--method", "un", "--p", "0.01",
                     "--train-cascades", str(train_path), "--test-cascades", str(test_path),
                     "--truth", "exact", "--truth-model", str(truth_path),
                     "--out", str(out)])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        for field in ("mkl", "mkl_observed", "mkl_hidden", "compositive", "mrr",
                      "r_mrr", "n_observed", "n_hidden", "n_rank_cases"):
            assert field in metrics
        assert (out / "kl_dump.csv").exists()

    def test_im_method_with_histogram(self, tmp_path):
        run, train_path, test_path, truth_path = small_corpus(tmp_path)
        model_path = tmp_path / "im.json"
        model_path.write_text(json.dumps(run.im.model.to_dict()))
        out = tmp_path / "eval_im"
        code = main(["evaluate", "--method", "im", "--model", str(model_path),
                     "--train-cascades", str(train_path), "--test-cascades", str(test_path),
                     "--truth", "exact", "--truth-model", str(truth_path),
                     "--out", str(out)])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["mkl"] >= 0.0
        assert (out / "histogram.csv").exists() and (out / "histogram.png").exists()
        import csv
        with (out / "kl_dump.csv").open() as fp:
            kl_values = [float(row["kl"]) for row in csv.DictReader(fp)]
        assert kl_values and all(math.isfinite(v) for v in kl_values)

    def test_ratio_truth_mode(self, tmp_path):
        _, train_path, test_path, _ = small_corpus(tmp_path)
        out = tmp_path / "eval_bd"
        assert main(["evaluate", "--method", "bd+mf", "--train-cascades", str(train_path),
                     "--test-cascades", str(test_path), "--truth", "ratio",
                     "--out", str(out)]) == 0
        assert json.loads((out / "metrics.json").read_text())["n_observed"] > 0

    def test_disjoint_nodes_is_domain_error(self, tmp_path):
        _, train_path, _, truth_path = small_corpus(tmp_path)
        foreign = tmp_path / "foreign.jsonl"
        foreign.write_text('{"mid":"m","events":[{"parent":null,"child":"zz","t":0},'
                           '{"parent":"zz","child":"qq","t":1}]}\n')
        code = main(["evaluate", "--method", "un", "--train-cascades", str(train_path),
                     "--test-cascades", str(foreign), "--truth", "ratio",
                     "--out", str(tmp_path / "x")])
        assert code == 3

    def test_unknown_method(self, tmp_path):
        _, train_path, test_path, _ = small_corpus(tmp_path)
        assert main(["evaluate", "--method", "zz", "--train-cascades", str(train_path),
                     "--test-cascades", str(test_path), "--out", str(tmp_path / "x")]) == 2


class TestBaselinesCommand:
    def test_writes_tables(self, tmp_path):
        _, train_path, _, _ = small_corpus(tmp_path)
        out = tmp_path / "tables"
        assert main(["baselines", "--train-cascades", str(train_path),
                     "--out", str(out)]) == 0
        for name in ("pairwise_bd.csv", "pairwise_ji.csv", "pairwise_em.csv"):
            lines = (out / name).read_text().splitlines()
            assert lines[0] == "u,v,probability,successes,attempts"
            assert len(lines) > 1


class TestReproduceCommand:
    def test_requires_profile_or_cascades(self, tmp_path):
        assert main(["reproduce", "--out", str(tmp_path)]) == 2

    def test_bad_boundaries(self, tmp_path):
        assert main(["reproduce", "--cascades", "x.jsonl", "--boundaries", "a,b",
                     "--out", str(tmp_path)]) == 2

    def test_synthetic_profile_bundle(self, tmp_path):
        out = tmp_path / "bundle"
        assert main(["reproduce", "--profile", "synthetic-small", "--seed", "99",
                     "--out", str(out)]) == 0
        for name in ("network.json", "network_shuffled.json", "truth_model.json",
                     "model_im.json", "cascades_train.jsonl", "cascades_test.jsonl",
                     "cascades_test_shuffled.jsonl", "loss_trace.csv", "loss_curve.png",
                     "histogram.csv", "histogram.png", "restart_check.json",
                     "summary.json"):
            assert (out / name).exists(), name
        for label in ("trained", "shuffled"):
            rows = (out / f"comparison_{label}.csv").read_text().splitlines()
            assert len(rows) == 11  # header + one row per enabled method
            header = rows[0].split(",")
            comp_idx = header.index("compositive")
            values = [float(r.split(",")[comp_idx]) for r in rows[1:]]
            assert values == sorted(values)  # ordered by compositive ascending
            assert all(r.split(",")[0] for r in rows[1:])
            assert (out / f"comparison_{label}.png").exists()
        check = json.loads((out / "restart_check.json").read_text())
        assert check["i_ratio"] <= 0.2 and check["s_ratio"] <= 0.2


def test_out_dir_env_override(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("INFLUCAST_OUT", str(target))
    assert main(["generate", "--seed", "3", "--n-nodes", "20", "--edges-per-node", "2",
                 "--k", "2", "--cascades", "0"]) == 0
    assert (target / "network.json").exists()


class TestRoundRobin:
    def test_runs_end_to_end_on_real_format_log(self, tmp_path):
        # synthetic stand-in formatted as a real log spanning three windows
        run, _, _, _ = small_corpus(tmp_path, n_cascades=900, seed=9)
        shifted = {}
        for i, (mid, events) in enumerate(sorted(run.train_log.messages.items())):
            offset = (i % 3) * 100
            shifted[mid] = tuple(dataclasses.replace(e, time=e.time + offset)
                                 for e in events)
        log_path = tmp_path / "real.jsonl"
        with log_path.open("w") as fp:
            dump_cascades(type(run.train_log)(messages=shifted), fp)
        out = tmp_path / "rounds"
        code = main(["reproduce", "--cascades", str(log_path),
                     "--boundaries", "0,100,200,300", "--rounds", "1",
                     "--config", str(self.write_cfg(tmp_path)), "--out", str(out)])
        assert code == 0
        for test_idx in (0, 2):
            base = out / f"round1_test{test_idx}"
            comparison = (base / "comparison.csv").read_text().splitlines()
            assert len(comparison) >= 2
            metrics = json.loads((base / "metrics_im.json").read_text())
            for field in ("mkl", "mkl_observed", "mkl_hidden", "compositive",
                          "mrr", "r_mrr", "n_observed", "n_hidden"):
                assert field in metrics
            assert metrics["n_observed"] + metrics["n_hidden"] > 0
            import math as _math
            assert metrics["compositive"] == pytest.approx(
                _math.hypot(metrics["mkl_observed"], metrics["mkl_hidden"]))
            if metrics["mrr"] is not None:
                assert metrics["r_mrr"] == pytest.approx(1.0 - metrics["mrr"])
            assert (base / "comparison.png").exists()

    @staticmethod
    def write_cfg(tmp_path):
        cfg = tmp_path / "rounds.toml"
        cfg.write_text("[train]\nk = 3\nlambda = 0.05\nmax_epochs = 10\n"
                       "[baselines]\nmf_iters = 50\nem_max_iters = 10\n")
        return cfg


def test_help_runs():
    assert main(["--help"]) == 0
    assert main([]) == 0
