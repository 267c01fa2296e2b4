import json
import math

import numpy as np
import pytest

from qif_lab.cli import EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, main
from qif_lab.datasets import two_moons


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, doc, command=None, out="out", extra=()):
    cfg = write_config(tmp_path, doc)
    return main([command or doc["command"], "--config", cfg, "--out", str(tmp_path / out), *extra])


def small_flow(**overrides):
    block = {
        "divergence": "qif",
        "iterations": 40,
        "n_particles": 60,
        "grid": {"resolution": 16},
        "snapshot_every": 10,
    }
    block.update(overrides)
    return {"command": "flow", "seed": 3, "flow": block}


def small_train(**overrides):
    block = {"layer_widths": [2, 8, 2], "epochs": 3, "dataset": {"n_train": 80, "n_test": 40}}
    block.update(overrides)
    return {"command": "train", "seed": 1, "train": block}


def summary(tmp_path, out="out"):
    return json.loads((tmp_path / out / "summary.json").read_text())


class TestDivergenceCommand:
    def test_uniform_pair(self, tmp_path, capsys):
        u = [0.25] * 4
        assert run(tmp_path, {"command": "divergence", "divergence": {"p": u, "q": u}}) == EXIT_OK
        s = summary(tmp_path)
        assert s["schema_version"] == 1
        for key in ("kl", "kl_reverse", "js", "qif", "bhattacharyya", "g_of_kl", "g_of_js"):
            assert s[key] == 0.0, key
        assert s["fidelity"] == 1.0
        printed = json.loads(capsys.readouterr().out)
        assert printed["fidelity"] == 1.0

    def test_disjoint_pair(self, tmp_path):
        assert run(tmp_path, {"command": "divergence", "divergence": {"p": [1, 0], "q": [0, 1]}}) == EXIT_OK
        s = summary(tmp_path)
        assert s["fidelity"] == 0.0
        assert s["qif"] == pytest.approx(-1e-13 * math.log(1e-13), rel=1e-12)
        assert s["qif"] == pytest.approx(2.993e-12, rel=1e-3)
        assert s["js"] == pytest.approx(math.log(2), abs=1e-15)

    def test_csv_inputs(self, tmp_path):
        (tmp_path / "p.csv").write_text("weight\n0.5\n0.5\n")
        (tmp_path / "q.csv").write_text("0.9\n0.1\n")
        doc = {"command": "divergence", "divergence": {"p_csv": "p.csv", "q_csv": "q.csv"}}
        assert run(tmp_path, doc) == EXIT_OK
        s = summary(tmp_path)
        assert s["kl"] == pytest.approx(0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1), rel=1e-12)

    def test_missing_file_named(self, tmp_path, capsys):
        doc = {"command": "divergence", "divergence": {"p_csv": "nope.csv", "q": [1.0]}}
        assert run(tmp_path, doc) == EXIT_INPUT
        assert "nope.csv" in capsys.readouterr().err

    @pytest.mark.parametrize("p", [[0.5, 0.6], [-0.5, 1.5], [0.5, 0.5, 0.0]])
    def test_malformed_distribution(self, tmp_path, p):
        assert run(tmp_path, {"command": "divergence", "divergence": {"p": p, "q": [0.5, 0.5]}}) == EXIT_INPUT


class TestFlowCommand:
    def test_outputs_and_improvement(self, tmp_path):
        assert run(tmp_path, small_flow(iterations=200, learning_rate=0.05)) == EXIT_OK
        s = summary(tmp_path)
        assert s["status"] == "ok" and s["schema_version"] == 1
        assert s["final_sinkhorn"] < s["initial_sinkhorn"]
        assert s["iterations"] == 200 and s["wall_ms"] > 0
        lines = (tmp_path / "out" / "trace.csv").read_text().splitlines()
        assert lines[0] == "iter,objective,sinkhorn,wall_ms"
        assert len(lines) == 1 + 21
        assert (tmp_path / "out" / "timing.csv").exists()

    def test_two_snapshots(self, tmp_path):
        assert run(tmp_path, small_flow(snapshot_every=40)) == EXIT_OK
        snaps = sorted(p.name for p in (tmp_path / "out" / "snapshots").iterdir())
        assert snaps == ["iter_000000.csv", "iter_000040.csv"]

    def test_svg_snapshots(self, tmp_path):
        assert run(tmp_path, small_flow(snapshot_every=40, svg=True)) == EXIT_OK
        svg = (tmp_path / "out" / "snapshots" / "iter_000040.svg").read_text()
        assert svg.startswith("<svg")

    def test_byte_identical(self, tmp_path):
        doc = small_flow()
        assert run(tmp_path, doc, out="a") == EXIT_OK
        assert run(tmp_path, doc, out="b") == EXIT_OK
        for name in ("trace.csv", "snapshots/iter_000040.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_abort_keeps_partial_trace(self, tmp_path, capsys):
        assert run(tmp_path, small_flow(learning_rate=1e300, snapshot_every=1)) == EXIT_NUMERICAL
        s = summary(tmp_path)
        assert s["status"] == "aborted"
        lines = (tmp_path / "out" / "trace.csv").read_text().splitlines()
        assert len(lines) >= 2
        assert "numerical abort" in capsys.readouterr().err

    def test_refuses_overwrite_without_force(self, tmp_path):
        doc = small_flow(iterations=5)
        assert run(tmp_path, doc) == EXIT_OK
        before = (tmp_path / "out" / "trace.csv").read_bytes()
        assert run(tmp_path, doc) == EXIT_INPUT
        assert (tmp_path / "out" / "trace.csv").read_bytes() == before
        assert run(tmp_path, doc, extra=["--force"]) == EXIT_OK

    @pytest.mark.parametrize(
        "block",
        [
            {"divergence": "wasserstein"},
            {"grid": {"resolution": 4}},
            {"init": {"shape": "heart"}},
            {"sinkhorn": {"reg": -1.0}},
            {"learnign_rate": 0.1},
        ],
    )
    def test_bad_flow_blocks(self, tmp_path, block):
        assert run(tmp_path, small_flow(**block)) == EXIT_INPUT


class TestTrainCommand:
    def test_default_run(self, tmp_path):
        assert run(tmp_path, {"command": "train", "seed": 0, "train": {}}) == EXIT_OK
        s = summary(tmp_path)
        assert s["schema_version"] == 1
        lines = (tmp_path / "out" / "history.csv").read_text().splitlines()
        assert len(lines) == 201

    def test_sweep_files(self, tmp_path):
        doc = small_train(sweep=["none", "kl_bidirectional", "qif"])
        assert run(tmp_path, doc) == EXIT_OK
        names = sorted(p.name for p in (tmp_path / "out").glob("history_*.csv"))
        assert names == ["history_kl_bidirectional.csv", "history_none.csv", "history_qif.csv"]

    def test_beta_zero_sweep_identical(self, tmp_path):
        assert run(tmp_path, small_train(beta=0.0, sweep=["none", "kl_bidirectional", "qif"])) == EXIT_OK
        contents = {(tmp_path / "out" / f"history_{k}.csv").read_bytes() for k in ("none", "kl_bidirectional", "qif")}
        assert len(contents) == 1

    def test_csv_dataset(self, tmp_path):
        rng = np.random.default_rng(0)
        two_moons(60, 0.2, rng).to_csv(tmp_path / "train.csv")
        two_moons(30, 0.2, rng).to_csv(tmp_path / "test.csv")
        doc = small_train(dataset={"train_csv": "train.csv", "test_csv": "test.csv"})
        assert run(tmp_path, doc) == EXIT_OK

    def test_dataset_schema_violation(self, tmp_path, capsys):
        (tmp_path / "train.csv").write_text("f0,f1,label\n0.1,0.2,7\n")
        (tmp_path / "test.csv").write_text("f0,f1,label\n0.1,0.2,0\n")
        doc = small_train(dataset={"train_csv": "train.csv", "test_csv": "test.csv"})
        assert run(tmp_path, doc) == EXIT_INPUT
        assert "train.csv" in capsys.readouterr().err

    def test_byte_identical_history(self, tmp_path):
        doc = small_train()
        run(tmp_path, doc, out="a")
        run(tmp_path, doc, out="b")
        assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


class TestOracleCommand:
    def test_passes_at_d8(self, tmp_path):
        assert run(tmp_path, {"command": "oracle-check", "oracle": {"dim": 8, "trials": 1000}}) == EXIT_OK
        s = summary(tmp_path)
        assert s["max_abs_deviation"] < 1e-10 and s["passed"] and s["schema_version"] == 1

    @pytest.mark.parametrize("block", [{"dim": 17}, {"dim": 0}, {"trials": 0}])
    def test_rejected(self, tmp_path, block):
        assert run(tmp_path, {"command": "oracle-check", "oracle": block}) == EXIT_INPUT


class TestPlumbing:
    def test_unknown_top_level_key(self, tmp_path, capsys):
        assert run(tmp_path, {"command": "oracle-check", "oracel": {}}) == EXIT_INPUT
        assert "oracel" in capsys.readouterr().err

    def test_command_mismatch(self, tmp_path):
        assert run(tmp_path, {"command": "oracle-check"}, command="flow") == EXIT_INPUT

    def test_missing_config(self, tmp_path):
        assert main(["divergence", "--config", str(tmp_path / "none.json")]) == EXIT_INPUT

    def test_invalid_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{command: divergence")
        assert main(["divergence", "--config", str(tmp_path / "c.json")]) == EXIT_INPUT

    def test_bad_command(self):
        assert main(["dance", "--config", "x.json"]) == EXIT_INPUT

    def test_output_dir_from_config(self, tmp_path):
        doc = {"command": "oracle-check", "output_dir": str(tmp_path / "here"), "oracle": {"trials": 5}}
        assert main(["oracle-check", "--config", write_config(tmp_path, doc)]) == EXIT_OK
        assert (tmp_path / "here" / "summary.json").exists()

    @pytest.mark.parametrize("value, code", [("1", EXIT_OK), ("2", EXIT_OK), ("0", EXIT_INPUT), ("many", EXIT_INPUT)])
    def test_thread_env(self, tmp_path, monkeypatch, value, code):
        monkeypatch.setenv("QIF_LAB_THREADS", value)
        assert run(tmp_path, {"command": "oracle-check", "oracle": {"trials": 5}}) == code
