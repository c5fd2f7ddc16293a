import math

import numpy as np
import pytest
import torch

from patchtraj.config import RunConfig, dump_config, load_config, parse_config
from patchtraj.data import generate_synthetic
from patchtraj.errors import ConfigError, TrainingDiverged
from patchtraj.training import (Trainer, evaluate, learning_rate, make_batch, predict_file, read_checkpoint,
                                split_windows, train)

from conftest import CONFIGS


class TestSchedule:
    def test_two_halvings(self):
        assert learning_rate(21, 1e-3, 10) == 2.5e-4

    def test_sequence(self):
        for epoch in range(0, 60):
            assert learning_rate(epoch, 1e-3, 10) == 1e-3 * 2.0 ** -math.floor(epoch / 10)

    def test_applied_to_optimizer(self, tiny_config):
        cfg = tiny_config.replace(lr_interval=1, epochs=3)
        trainer = Trainer(cfg)
        batch = make_batch(generate_synthetic(4, "turn", 0, 8, 4), torch.float32)
        for epoch in range(3):
            trainer.train_epoch(batch)
            assert trainer.optimizer.param_groups[0]["lr"] == cfg.lr * 2.0 ** -epoch


class TestConfig:
    def test_roundtrip(self, tiny_config):
        assert parse_config(dump_config(tiny_config)) == tiny_config

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("t_obs = 8\nlearning_rate = 0.1\n")

    def test_comments_and_scales(self):
        cfg = parse_config("# comment\nscales = 2, 4 ,8  # inline\n")
        assert cfg.scales == (2, 4, 8)

    @pytest.mark.parametrize("text", ["scales = 3", "lambda_joint = -1", "top_k = 5", "precision = half",
                                      "num_heads = 3", "t_obs = x"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_scales_must_divide_spectral_len(self):
        with pytest.raises(ConfigError):
            RunConfig(t_obs=8, spectral_len=6, scales=(2, 4))

    def test_shipped_configs_parse(self):
        for path in CONFIGS.glob("*.cfg"):
            load_config(path)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tiny_config, tmp_path):
        trainer = train(tiny_config, tmp_path)
        state = read_checkpoint(tmp_path / "final.pt")
        assert state["version"] == 1 and state["byteorder"] == "little"
        assert state["epoch"] == tiny_config.epochs
        assert RunConfig.from_dict(state["config"]) == tiny_config
        restored = Trainer.from_checkpoint(tmp_path / "final.pt")
        for (name, a), (_, b) in zip(trainer.model.state_dict().items(), restored.model.state_dict().items()):
            assert a.dtype == b.dtype and torch.equal(a, b), name

    def test_resume_next_step_identical(self, tiny_config, tmp_path):
        cfg = tiny_config.replace(epochs=3)
        windows = split_windows(cfg, generate_synthetic(10, cfg.synthetic_kind, 0, 8, 4, cfg.dt))["train"]
        batch = make_batch(windows)
        trainer = Trainer(cfg)
        for _ in range(2):
            trainer.train_epoch(batch)
        trainer.save(tmp_path / "mid.pt")
        expected = trainer.train_epoch(batch)
        resumed = Trainer.from_checkpoint(tmp_path / "mid.pt")
        assert resumed.train_epoch(batch) == expected
        for a, b in zip(trainer.model.parameters(), resumed.model.parameters()):
            assert torch.equal(a, b)

    def test_resumed_run_matches_uninterrupted(self, tiny_config, tmp_path):
        full = train(tiny_config.replace(epochs=4), tmp_path / "full")
        train(tiny_config.replace(epochs=2), tmp_path / "half")
        resumed = train(tiny_config.replace(epochs=4), tmp_path / "resumed", resume=tmp_path / "half" / "final.pt")
        assert resumed.history.metrics == full.history.metrics
        assert (tmp_path / "full" / "metrics.csv").read_text() == (tmp_path / "resumed" / "metrics.csv").read_text()

    def test_rejects_foreign_file(self, tmp_path):
        torch.save({"weights": 1}, tmp_path / "x.pt")
        with pytest.raises(ConfigError):
            read_checkpoint(tmp_path / "x.pt")


class TestTraining:
    def test_outputs(self, tiny_config, tmp_path):
        train(tiny_config, tmp_path)
        for name in ("metrics.csv", "loss.csv", "best.pt", "final.pt"):
            assert (tmp_path / name).exists()
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == "split,epoch,k,ade,fde,min_ade,min_fde"
        assert len(lines) == 1 + tiny_config.epochs
        assert lines[1].startswith("val,0,2,")

    def test_non_finite_loss_aborts(self, tiny_config, tmp_path):
        trainer = Trainer(tiny_config, tmp_path)
        batch = make_batch(generate_synthetic(3, "turn", 0, 8, 4))
        batch.features[0, 0, 0] = float("nan")
        with pytest.raises(TrainingDiverged) as exc:
            trainer.train_epoch(batch)
        assert exc.value.batch_index == 0 and exc.value.seed == tiny_config.seed
        assert exc.value.dump_path.exists()

    def test_double_precision(self, tiny_config):
        trainer = train(tiny_config.replace(precision="double", epochs=1))
        assert all(p.dtype == torch.float64 for p in trainer.model.parameters())


class TestEvaluate:
    def test_repeatable(self, tiny_config, tmp_path):
        train(tiny_config, tmp_path)
        a = evaluate(tmp_path / "final.pt", split="train")
        b = evaluate(tmp_path / "final.pt", split="train")
        assert a.csv_row("train", 1) == b.csv_row("train", 1)

    def test_k1(self, tiny_config, tmp_path):
        train(tiny_config, tmp_path)
        r = evaluate(tmp_path / "final.pt", k=1)
        assert r.k == 1 and r.min_ade == r.ade and r.min_fde == r.fde

    def test_text_data(self, tiny_config, tmp_path):
        train(tiny_config, tmp_path)
        track = "\n".join(f"{f} 7 {0.5 * f} 1.0" for f in range(14))
        (tmp_path / "scene.txt").write_text(track)
        r = evaluate(tmp_path / "final.pt", data=str(tmp_path / "scene.txt"))
        assert r.count == 14 - 12 + 1


class TestPredict:
    @pytest.fixture
    def checkpoint(self, tiny_config, tmp_path):
        train(tiny_config, tmp_path)
        return tmp_path / "final.pt"

    def write(self, path, offset=(0.0, 0.0)):
        w = generate_synthetic(1, "constant-velocity", 3, 10, 0)[0]
        lines = [f"{f} 4 {float(x + offset[0])!r} {float(y + offset[1])!r}" for f, (x, y) in enumerate(w.obs)]
        lines += ["0 9 1.0 1.0", "1 9 1.5 1.0"]  # short history, skipped
        path.write_text("\n".join(lines) + "\n")
        return path

    def read(self, path):
        return np.array([[float(v) for v in line.split()] for line in path.read_text().splitlines()])

    def test_records(self, checkpoint, tmp_path, caplog):
        out = tmp_path / "pred.txt"
        predict_file(checkpoint, self.write(tmp_path / "in.txt"), out)
        rows = self.read(out)
        assert rows.shape == (2 * 4, 5)
        assert set(rows[:, 0]) == {4}
        assert sorted(set(rows[:, 1])) == [0, 1]
        assert rows[:4, 2].tolist() == [10, 11, 12, 13]
        assert "agent 9" in caplog.text

    def test_repeatable(self, checkpoint, tmp_path):
        src = self.write(tmp_path / "in.txt")
        predict_file(checkpoint, src, tmp_path / "a.txt")
        predict_file(checkpoint, src, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_translation(self, checkpoint, tmp_path):
        predict_file(checkpoint, self.write(tmp_path / "a_in.txt"), tmp_path / "a.txt")
        predict_file(checkpoint, self.write(tmp_path / "b_in.txt", (12.0, -3.0)), tmp_path / "b.txt")
        a, b = self.read(tmp_path / "a.txt"), self.read(tmp_path / "b.txt")
        np.testing.assert_allclose(b[:, 3:] - a[:, 3:], np.broadcast_to([12.0, -3.0], a[:, 3:].shape), atol=1e-4)
