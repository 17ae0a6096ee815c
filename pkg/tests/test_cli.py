import json

import pandas as pd
import pytest

from cli import main, summarize_trajectories
from graphs import load_graphs


@pytest.fixture
def workdir(tmp_path):
    data = tmp_path / "data_seed1.json"
    assert main(["gen-data", "--kind", "toy", "--count", "3", "--nodes", "6", "--seed", "1",
                 "--out", str(data)]) == 0
    return tmp_path


class TestArguments:

    def test_unknown_flag(self):
        assert main(["eval", "--bogus"]) == 2

    def test_missing_command(self):
        assert main([]) == 2

    def test_missing_file(self, tmp_path):
        code = main(["oracle-sample", "--data", str(tmp_path / "absent.json"), "--num", "2",
                     "--out", str(tmp_path / "out.json")])
        assert code == 1

    def test_ode_excludes_pc(self, workdir):
        code = main(["oracle-sample", "--data", str(workdir / "data_seed1.json"), "--num", "2", "--ode", "--pc",
                     "--out", str(workdir / "out.json")])
        assert code == 1


class TestPipeline:

    def test_oracle_eval_inspect(self, workdir):
        samples, traj = workdir / "samples_seed3.json", workdir / "traj_seed3.jsonl"
        assert main(["oracle-sample", "--data", str(workdir / "data_seed1.json"), "--steps", "100", "--num", "4",
                     "--seed", "3", "--out", str(samples), "--traj", str(traj)]) == 0
        graphs = load_graphs(str(samples))
        assert len(graphs) == 4 and all(g.n == 6 for g in graphs)

        report_path = workdir / "report.json"
        assert main(["eval", "--ref", str(workdir / "data_seed1.json"), "--gen", str(samples),
                     "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["num_gen"] == 4
        assert set(report["mmd"]) == {"degree", "clustering", "orbit", "spectral"}

        summary_path = workdir / "summary.json"
        assert main(["inspect", "--traj", str(traj), "--out", str(summary_path)]) == 0
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        assert summary["num_trajectories"] == 4
        assert summary["steps"] == 100

    def test_same_seed_same_samples(self, workdir):
        outputs = []
        for name in ("a_seed9.json", "b_seed9.json"):
            path = workdir / name
            assert main(["oracle-sample", "--data", str(workdir / "data_seed1.json"), "--steps", "50", "--num", "3",
                         "--seed", "9", "--out", str(path)]) == 0
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1]

    def test_train_then_sample(self, workdir):
        cfg = workdir / "small.cfg"
        cfg.write_text("hidden = 4\nlayers = 1\nbatch = 2\ntime_dim = 2\nmax_degree = 3\n", encoding="utf-8")
        model, log = workdir / "model_seed0.json", workdir / "train.csv"
        assert main(["train", "--data", str(workdir / "data_seed1.json"), "--config", str(cfg), "--epochs", "2",
                     "--log", str(log), "--out", str(model)]) == 0
        assert len(pd.read_csv(log)) == 2
        samples = workdir / "learned_seed0.json"
        assert main(["sample", "--model", str(model), "--data", str(workdir / "data_seed1.json"), "--steps", "20",
                     "--num", "2", "--out", str(samples)]) == 0
        assert len(load_graphs(str(samples))) == 2


    def test_seed_added_to_output_names(self, workdir):
        assert main(["gen-data", "--kind", "toy", "--toy-kind", "cycles-vs-paths", "--count", "4", "--nodes", "6",
                     "--seed", "4", "--out", str(workdir / "toy.json")]) == 0
        assert not (workdir / "toy.json").exists()
        data = workdir / "toy_seed4.json"
        assert len(load_graphs(str(data))) == 4

        assert main(["oracle-sample", "--data", str(data), "--steps", "200", "--num", "3", "--seed", "2",
                     "--out", str(workdir / "run-{seed}.json")]) == 0
        samples = workdir / "run-2.json"
        report_path = workdir / "report.json"
        assert main(["eval", "--ref", str(data), "--gen", str(samples), "--rule", "toy",
                     "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert len(report["validity"]) == 3


class TestSummarizeTrajectories:

    def test_convergence_steps(self):
        df = pd.DataFrame({
            "trajectory": [0, 0, 0, 0, 1, 1, 1, 1],
            "step": [0, 1, 2, 3, 0, 1, 2, 3],
            "matches_final": [False, True, False, True, True, True, True, True],
        })
        summary = summarize_trajectories(df)
        assert summary["per_trajectory"] == [3, 0]
        assert summary["early_stop_fraction"]["max"] == 0.75
        assert summary["convergence_step"]["50%"] == 1.5

    def test_missing_columns(self):
        with pytest.raises(ValueError):
            summarize_trajectories(pd.DataFrame({"trajectory": [0], "step": [0]}))
