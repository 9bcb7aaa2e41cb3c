import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gpdyn.cli import main
from gpdyn.trajectory import Trajectory


def write_config(path: Path, **kw):
    doc = {
        "schema_version": 1,
        "system": "pendulum",
        "method": "structured",
        "seed": 11,
        "data_dir": "data",
        "out_dir": "train",
        "overrides": {"epochs": 2, "feature_count": 48, "window_length": 6, "train_horizon": 3.0},
    }
    doc.update(kw)
    path.write_text(json.dumps(doc))
    return doc


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """generate -> train once; several tests read the artifacts."""
    root = tmp_path_factory.mktemp("pipe")
    cfg_path = root / "run.json"
    write_config(cfg_path)
    assert main(["generate", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path)]) == 0
    return root


class TestGenerate:
    def test_default_pendulum_row_count(self, tmp_path):
        out = tmp_path / "data"
        assert main(["generate", "--system", "pendulum", "--out", str(out), "--seed", "3"]) == 0
        noisy = Trajectory.from_csv(out / "noisy.csv")
        assert noisy.n_points == 101
        truth = Trajectory.from_csv(out / "truth.csv")
        assert truth.n_points == 101
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["system"] == "pendulum"
        assert manifest["noise_variances"] == [0.1, 0.1]

    def test_zero_noise_writes_identical_files(self, tmp_path):
        out = tmp_path / "data"
        code = main(
            ["generate", "--system", "rigid_body", "--out", str(out), "--seed", "1",
             "--steps", "20", "--zero-noise"]
        )
        assert code == 0
        assert (out / "truth.csv").read_text() == (out / "noisy.csv").read_text()

    def test_unknown_system_exits_2(self, tmp_path, capsys):
        code = main(["generate", "--system", "pendulum", "--out", str(tmp_path)])
        assert code == 0
        with pytest.raises(SystemExit) as info:
            main(["generate", "--system", "lorenz", "--out", str(tmp_path)])
        assert info.value.code == 2


class TestCsvRoundTrip:
    def test_full_precision(self, tmp_path):
        rng = np.random.default_rng(0)
        traj = Trajectory(np.sort(rng.random(7)) + np.arange(7), rng.standard_normal((7, 3)))
        path = tmp_path / "t.csv"
        traj.to_csv(path)
        back = Trajectory.from_csv(path)
        assert np.array_equal(back.times, traj.times)
        assert np.array_equal(back.states, traj.states)

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            Trajectory.from_csv(path)


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.json"
        write_config(cfg, plot=True)
        assert main(["train", "--config", str(cfg)]) == 2

    def test_unknown_override_rejected(self, tmp_path):
        cfg = tmp_path / "run.json"
        write_config(cfg, overrides={"learning_rate": 1.0})
        assert main(["train", "--config", str(cfg)]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2

    def test_missing_key(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"schema_version": 1, "system": "pendulum"}))
        assert main(["train", "--config", str(cfg)]) == 2


class TestTrain:
    def test_artifacts(self, pipeline):
        out = pipeline / "train"
        history = (out / "history.csv").read_text().splitlines()
        assert history[0].startswith("epoch,lr,")
        assert len(history) == 3  # header + 2 epochs
        ckpts = sorted((out / "checkpoints").glob("epoch_*.json"))
        assert [p.name for p in ckpts] == ["epoch_0000.json", "epoch_0001.json"]
        selected = json.loads((out / "selected.json").read_text())
        assert selected["selected_epoch"] in (0, 1)
        assert len(selected["params"]) > 0

    def test_zero_epoch_smoke(self, tmp_path):
        cfg = tmp_path / "run.json"
        write_config(cfg, overrides={"epochs": 0, "feature_count": 16, "window_length": 4, "train_horizon": 0.8})
        assert main(["generate", "--config", str(cfg)]) == 0
        assert main(["train", "--config", str(cfg)]) == 0

    def test_resume_reloads_parameters(self, pipeline):
        # Save/load round trip: resuming re-reads the stored parameters.
        cfg_path = pipeline / "run.json"
        doc = json.loads(cfg_path.read_text())
        doc["overrides"]["epochs"] = 4
        cfg_path.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg_path), "--resume"]) == 0
        ckpts = sorted((pipeline / "train" / "checkpoints").glob("epoch_*.json"))
        assert len(ckpts) == 4
        first = json.loads(ckpts[0].read_text())
        from gpdyn.cli import load_model_from_checkpoint
        from gpdyn.gradients import get_params

        model, _ = load_model_from_checkpoint(first)
        assert_allclose(get_params(model), np.asarray(first["params"]), atol=0.0)


class TestRolloutAndEval:
    def test_rollout_artifacts(self, pipeline, tmp_path):
        sel = pipeline / "train" / "selected.json"
        out = tmp_path / "rollouts"
        code = main(
            ["rollout", "--checkpoint", str(sel), "--steps", "10", "--samples", "3",
             "--out", str(out), "--seed", "5"]
        )
        assert code == 0
        files = sorted(out.glob("rollout_*.csv"))
        assert len(files) == 3
        traj = Trajectory.from_csv(files[0])
        assert traj.n_points == 11

    def test_zero_steps_emits_initial_state(self, pipeline, tmp_path):
        sel = pipeline / "train" / "selected.json"
        out = tmp_path / "r0"
        assert main(
            ["rollout", "--checkpoint", str(sel), "--steps", "0", "--samples", "1",
             "--out", str(out)]
        ) == 0
        traj = Trajectory.from_csv(out / "rollout_00.csv")
        payload = json.loads(sel.read_text())
        assert traj.n_points == 1
        assert_allclose(traj.states[0], payload["initial_state"], atol=0.0)

    def test_step_size_override_changes_grid(self, pipeline, tmp_path):
        sel = pipeline / "train" / "selected.json"
        out = tmp_path / "half"
        assert main(
            ["rollout", "--checkpoint", str(sel), "--steps", "4", "--samples", "1",
             "--step-size", "0.05", "--out", str(out)]
        ) == 0
        traj = Trajectory.from_csv(out / "rollout_00.csv")
        assert traj.times[1] == pytest.approx(0.05)

    def test_missing_checkpoint_exits_2(self, tmp_path):
        assert main(
            ["rollout", "--checkpoint", str(tmp_path / "no.json"), "--steps", "1",
             "--out", str(tmp_path / "o")]
        ) == 2

    def test_eval_identical_inputs_zero_l2(self, pipeline, tmp_path):
        sel = pipeline / "train" / "selected.json"
        roll_dir = tmp_path / "rolls"
        assert main(
            ["rollout", "--checkpoint", str(sel), "--steps", "6", "--samples", "2",
             "--out", str(roll_dir), "--seed", "7"]
        ) == 0
        # ensemble mean of two identical copies equals the "truth"
        manifest = json.loads((roll_dir / "ensemble.json").read_text())
        a = Trajectory.from_csv(roll_dir / manifest["rollouts"][0])
        b = Trajectory.from_csv(roll_dir / manifest["rollouts"][1])
        mean = Trajectory(a.times, 0.5 * (a.states + b.states))
        truth_csv = tmp_path / "truth.csv"
        mean.to_csv(truth_csv)
        out = tmp_path / "metrics"
        assert main(
            ["eval", "--ensemble", str(roll_dir), "--truth", str(truth_csv),
             "--metrics", "l2,uncertainty", "--out", str(out)]
        ) == 0
        scalars = json.loads((out / "metrics.json").read_text())["scalars"]
        assert scalars["l2_total"] <= 1e-12
        assert (out / "l2_series.csv").exists()
        assert (out / "uncertainty.csv").exists()

    def test_eval_det_and_energy(self, pipeline, tmp_path):
        sel = pipeline / "train" / "selected.json"
        roll_dir = tmp_path / "rolls"
        assert main(
            ["rollout", "--checkpoint", str(sel), "--steps", "5", "--samples", "2",
             "--out", str(roll_dir)]
        ) == 0
        truth_csv = pipeline / "data" / "truth.csv"
        out = tmp_path / "metrics"
        code = main(
            ["eval", "--ensemble", str(roll_dir), "--truth", str(truth_csv),
             "--metrics", "det,energy", "--out", str(out)]
        )
        # energy needs the truth grid only for the starting energy; det needs
        # the checkpoint. Both write series files.
        assert code == 0
        scalars = json.loads((out / "metrics.json").read_text())["scalars"]
        assert "det_max_abs_dev" in scalars
        assert "energy_error" in scalars

    def test_eval_missing_file_exits_2(self, tmp_path):
        assert main(
            ["eval", "--ensemble", str(tmp_path / "none"), "--out", str(tmp_path / "m")]
        ) == 2

    def test_eval_unknown_metric_exits_2(self, pipeline, tmp_path):
        sel = pipeline / "train" / "selected.json"
        roll_dir = tmp_path / "rolls"
        main(["rollout", "--checkpoint", str(sel), "--steps", "2", "--samples", "1",
              "--out", str(roll_dir)])
        assert main(
            ["eval", "--ensemble", str(roll_dir), "--metrics", "volume",
             "--out", str(tmp_path / "m")]
        ) == 2
