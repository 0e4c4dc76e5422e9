import hashlib
import json

import numpy as np
import pytest

from multiplexgcn import ingest, model, synth
from multiplexgcn.cli import main


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def dataset_dir(tmp_path):
    config = synth.SynthConfig(
        nodes_per_type=(60,),
        edge_types=[synth.EdgeTypeSpec(0, 0, 0.5, 0.01),
                    synth.EdgeTypeSpec(0, 0, 0.04, 0.04)],
        num_classes=6, feature_dim=5, class_separation=2.0)
    g, _, _ = synth.generate(config, seed=3)
    path = tmp_path / "data"
    ingest.write_dataset(g, path)
    return path


class TestTrainCommand:
    def test_link_train_emits_artifacts(self, dataset_dir, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--task", "link", "--data", str(dataset_dir),
                     "--out", str(out), "--epochs", "3", "--dim", "6",
                     "--seed", "1"])
        assert code == 0
        for name in ("checkpoint.bin", "history.tsv", "metrics.tsv",
                     "manifest.json", "history.png", "metrics.png"):
            assert (out / name).exists(), name
        assert "checkpoint" in capsys.readouterr().out

    def test_zero_epochs_checkpoint_equals_initialization(self, dataset_dir,
                                                          tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--task", "link", "--data", str(dataset_dir),
                     "--out", str(out), "--epochs", "0", "--dim", "5",
                     "--seed", "9"])
        assert code == 0
        params, _ = model.load_checkpoint(out / "checkpoint.bin")
        init_seed = np.random.SeedSequence(9).spawn(3)[0]
        expected = model.init_params(2, 5, 5, 2, seed=init_seed)
        np.testing.assert_array_equal(params.relation_weights,
                                      expected.relation_weights)
        for a, b in zip(params.layer_weights, expected.layer_weights):
            np.testing.assert_array_equal(a, b)

    def test_freeze_beta_recorded_and_effective(self, dataset_dir,
                                                tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--task", "link", "--data", str(dataset_dir),
                     "--out", str(out), "--epochs", "4", "--dim", "5",
                     "--ablation", "freeze_beta"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["ablation"] == "freeze_beta"
        params, header = model.load_checkpoint(out / "checkpoint.bin")
        np.testing.assert_array_equal(params.relation_weights, [1.0, 1.0])
        assert header["extra"]["ablation"] == "freeze_beta"

    def test_node_train(self, dataset_dir, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--task", "node", "--data", str(dataset_dir),
                     "--out", str(out), "--epochs", "3", "--dim", "6"])
        assert code == 0
        params, header = model.load_checkpoint(out / "checkpoint.bin")
        assert params.classifier is not None
        assert header["extra"]["task"] == "node"

    def test_toy_fixture_trains_with_default_hyperparameters(self, tmp_path):
        toy = tmp_path / "toy"
        ingest.write_dataset(synth.toy_retail_graph(), toy)
        out = tmp_path / "run"
        code = main(["train", "--task", "link", "--data", str(toy),
                     "--out", str(out), "--layers", "2", "--dim", "200",
                     "--epochs", "5"])
        assert code == 0
        assert (out / "checkpoint.bin").exists()

    def test_manifest_replay_bitwise(self, dataset_dir, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        args = ["train", "--task", "link", "--data", str(dataset_dir),
                "--epochs", "3", "--dim", "5", "--seed", "4",
                "--deterministic"]
        assert main(args + ["--out", str(out1)]) == 0
        manifest = json.loads((out1 / "manifest.json").read_text())
        replay_argv = [a if a != str(out1) else str(out2)
                       for a in manifest["argv"]]
        assert main(replay_argv) == 0
        for name in ("checkpoint.bin", "history.tsv", "metrics.tsv"):
            assert digest(out1 / name) == digest(out2 / name), name
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert ({k: v["sha256"] for k, v in m1["outputs"].items()}
                == {k: v["sha256"] for k, v in m2["outputs"].items()})

    def test_from_manifest_replays_in_place(self, dataset_dir, tmp_path):
        out = tmp_path / "run"
        args = ["train", "--task", "link", "--data", str(dataset_dir),
                "--out", str(out), "--epochs", "2", "--dim", "5",
                "--seed", "8", "--deterministic"]
        assert main(args) == 0
        first = json.loads((out / "manifest.json").read_text())
        assert main(["--from-manifest", str(out / "manifest.json")]) == 0
        second = json.loads((out / "manifest.json").read_text())
        assert ({k: v["sha256"] for k, v in first["outputs"].items()}
                == {k: v["sha256"] for k, v in second["outputs"].items()})

    def test_missing_data_dir_usage_error(self, tmp_path):
        code = main(["train", "--task", "link", "--data",
                     str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_unknown_flag_exits_two(self, dataset_dir, tmp_path):
        code = main(["train", "--task", "link", "--data", str(dataset_dir),
                     "--out", str(tmp_path / "o"), "--frobnicate"])
        assert code == 2

    def test_task_is_required(self, dataset_dir, tmp_path):
        code = main(["train", "--data", str(dataset_dir),
                     "--out", str(tmp_path / "o")])
        assert code == 2


class TestEvalCommand:
    def train_once(self, dataset_dir, tmp_path, task="link", seed=5):
        out = tmp_path / f"train-{task}"
        assert main(["train", "--task", task, "--data", str(dataset_dir),
                     "--out", str(out), "--epochs", "3", "--dim", "5",
                     "--seed", str(seed)]) == 0
        return out

    def read_metrics(self, path):
        rows = {}
        for line in path.read_text().strip().splitlines()[1:]:
            task, group, metric, value, seed = line.split("\t")
            rows[(task, group, metric, seed)] = float(value)
        return rows

    def test_eval_reproduces_train_test_metrics(self, dataset_dir,
                                                tmp_path):
        run = self.train_once(dataset_dir, tmp_path, seed=5)
        out = tmp_path / "eval"
        code = main(["eval", "--data", str(dataset_dir), "--checkpoint",
                     str(run / "checkpoint.bin"), "--out", str(out),
                     "--seed", "5"])
        assert code == 0
        train_rows = self.read_metrics(run / "metrics.tsv")
        eval_rows = self.read_metrics(out / "metrics.tsv")
        for key, value in eval_rows.items():
            task = key[0]
            if task.endswith(":test"):
                assert train_rows[key] == value, key

    def test_missing_checkpoint_exit_two(self, dataset_dir, tmp_path):
        code = main(["eval", "--data", str(dataset_dir), "--checkpoint",
                     str(tmp_path / "missing.bin"),
                     "--out", str(tmp_path / "e")])
        assert code == 2

    def test_seed_sweep_emits_summary_rows(self, dataset_dir, tmp_path):
        run = self.train_once(dataset_dir, tmp_path, seed=6)
        out = tmp_path / "sweep"
        code = main(["eval", "--data", str(dataset_dir), "--checkpoint",
                     str(run / "checkpoint.bin"), "--out", str(out),
                     "--seeds", "1,2,3"])
        assert code == 0
        rows = self.read_metrics(out / "metrics.tsv")
        mean_keys = [k for k in rows if k[1] == "summary_mean"]
        std_keys = [k for k in rows if k[1] == "summary_std"]
        assert mean_keys and std_keys
        # the mean row matches the per-seed rows it summarizes
        for task, group, metric, seed in mean_keys:
            per_seed = [v for (t, g, m, s), v in rows.items()
                        if t == task and m == metric and g == "macro"]
            if per_seed:
                assert rows[(task, group, metric, seed)] == pytest.approx(
                    np.mean(per_seed))


class TestVerifyCommand:
    def test_toy_passes(self, tmp_path, capsys):
        out = tmp_path / "verify"
        code = main(["verify", "--toy", "--out", str(out), "--beta",
                     "1.0,0.5"])
        assert code == 0
        assert "PASS" in capsys.readouterr().out
        assert (out / "deviations.tsv").exists()
        assert (out / "deviations.png").exists()

    def test_on_synth_dataset(self, dataset_dir, tmp_path):
        out = tmp_path / "verify"
        code = main(["verify", "--data", str(dataset_dir), "--out",
                     str(out), "--max-l", "2"])
        assert code == 0

    def test_needs_data_or_toy(self, tmp_path):
        code = main(["verify", "--out", str(tmp_path / "v")])
        assert code == 2


class TestSynthCommand:
    def test_same_seed_identical_digests(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["synth", "--seed", "7", "--nodes", "50",
                         "--out", str(out)])
            assert code == 0
            outs.append(out)
        for name in (ingest.META_FILE, ingest.EDGES_FILE,
                     ingest.FEATURES_FILE, ingest.LABELS_FILE):
            assert digest(outs[0] / name) == digest(outs[1] / name)
        m0 = json.loads((outs[0] / "manifest.json").read_text())
        m1 = json.loads((outs[1] / "manifest.json").read_text())
        assert ({k: v["sha256"] for k, v in m0["outputs"].items()}
                == {k: v["sha256"] for k, v in m1["outputs"].items()})

    def test_custom_edge_types_roundtrip(self, tmp_path):
        out = tmp_path / "ds"
        code = main(["synth", "--seed", "1", "--nodes", "20,10",
                     "--edge-type", "0:1:0.4:0.05",
                     "--edge-type", "0:0:0.1:0.1",
                     "--classes", "2", "--out", str(out)])
        assert code == 0
        g = ingest.load_dataset(out)
        assert g.num_edge_types == 2
        assert g.num_node_types == 2
        assert g.n == 30

    def test_bad_edge_type_spec(self, tmp_path):
        code = main(["synth", "--edge-type", "0:0:0.5", "--out",
                     str(tmp_path / "x")])
        assert code == 2

    def test_verify_synth_roundtrip(self, tmp_path):
        out = tmp_path / "ds"
        assert main(["synth", "--seed", "2", "--nodes", "25",
                     "--out", str(out)]) == 0
        code = main(["verify", "--data", str(out), "--out",
                     str(tmp_path / "v"), "--max-l", "3"])
        assert code == 0
