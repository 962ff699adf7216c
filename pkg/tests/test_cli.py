"""CLI subcommands: generate / auction / train / evaluate / sweep."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from risauction.cli import main
from risauction.harness import save_config

from test_harness import tiny_config


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.yaml"
    save_config(tiny_config(output_dir=str(tmp_path / "out")), path)
    return path


class TestGenerate:
    def test_writes_scenario_json(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "scenario.json"
        assert main(["generate", "--config", str(cfg_path), "--macro-seed", "3",
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["user_positions"]) == 6
        assert len(doc["association"]) == 6
        assert len(doc["gain_ur"]) == 6 and len(doc["gain_ur"][0]) == 4

    def test_stdout_mode(self, cfg_path, capsys):
        assert main(["generate", "--config", str(cfg_path)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert "bs_positions" in doc

    def test_deterministic_given_seed(self, cfg_path, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["generate", "--config", str(cfg_path), "--macro-seed", "1", "--out", str(a)])
        main(["generate", "--config", str(cfg_path), "--macro-seed", "1", "--out", str(b)])
        assert a.read_text() == b.read_text()


class TestAuction:
    def test_heuristic_episode_with_trace(self, cfg_path, tmp_path, capsys):
        trace = tmp_path / "trace.jsonl"
        assert main(["auction", "--config", str(cfg_path), "--macro-seed", "0",
                     "--trace", str(trace)]) == 0
        lines = trace.read_text().strip().splitlines()
        assert len(lines) >= 1
        record = json.loads(lines[0])
        assert set(record) == {"round", "price", "bids", "budgets", "allocated"}
        assert record["round"] == 0

    def test_seed_flag_changes_scenario(self, cfg_path, tmp_path):
        t1, t2 = tmp_path / "t1.jsonl", tmp_path / "t2.jsonl"
        main(["auction", "--config", str(cfg_path), "--trace", str(t1), "--seed", "1"])
        main(["auction", "--config", str(cfg_path), "--trace", str(t2), "--seed", "2"])
        assert t1.read_text() != t2.read_text()


class TestTrainEvaluateSweep:
    def test_full_cli_pipeline(self, cfg_path, tmp_path, capsys):
        ckpt = tmp_path / "out" / "ckpt_gamma_0.npz"
        assert main(["train", "--config", str(cfg_path), "--gamma", "0.0",
                     "--out", str(ckpt)]) == 0
        assert ckpt.exists()

        assert main(["evaluate", "--config", str(cfg_path), "--ckpt", str(ckpt),
                     "--gamma", "0.0"]) == 0
        out_dir = tmp_path / "out"
        reports = (out_dir / "reports.csv").read_text().strip().splitlines()
        assert len(reports) == 1 + 3 * 2  # header + n_macro * n_micro

        ckpt2 = tmp_path / "out" / "ckpt_gamma_0.2.npz"
        assert main(["train", "--config", str(cfg_path), "--gamma", "0.2",
                     "--out", str(ckpt2)]) == 0
        assert main(["sweep", "--config", str(cfg_path),
                     "--ckpt-dir", str(out_dir)]) == 0
        assert (out_dir / "fig5_ris_distribution.csv").exists()

    def test_episodes_override(self, cfg_path, tmp_path):
        ckpt = tmp_path / "quick.npz"
        assert main(["train", "--config", str(cfg_path), "--gamma", "0.1",
                     "--episodes", "4", "--out", str(ckpt)]) == 0
        curve = ckpt.with_suffix(".curve.csv").read_text().strip().splitlines()
        assert len(curve) == 2  # header + single iteration

    def test_set_override(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "s.json"
        assert main(["generate", "--config", str(cfg_path), "--out", str(out),
                     "--set", "system.n_ue=3"]) == 0
        assert len(json.loads(out.read_text())["user_positions"]) == 3

    def test_unknown_set_key_fails(self, cfg_path):
        with pytest.raises(ValueError, match="unknown config key"):
            main(["generate", "--config", str(cfg_path), "--set", "system.bogus=3"])
