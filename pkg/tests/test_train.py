import math

import numpy as np
import pytest

from ctcnn.data import DatasetSplit, Sample
from ctcnn.errors import ConfigError, DimensionError, NumericError
from ctcnn.model import build_model, load_checkpoint
from ctcnn.tensor import Tensor
from ctcnn.train import (
    BestCheckpoint,
    EpochMetrics,
    TrainConfig,
    accuracy,
    evaluate,
    run_training,
    write_metrics_csv,
)


def _samples(n, seed, size=64):
    rng = np.random.default_rng(seed)
    return [
        Sample(
            Tensor(rng.uniform(0.0, 1.0, (size, size, 3)).astype(np.float32)),
            i % 4,
            f"mem://{i}",
        )
        for i in range(n)
    ]


def _split(seed=0):
    return DatasetSplit(train=_samples(8, seed), val=_samples(4, seed + 100), seed=seed)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.lr) == (32, 32, 0.001)
        assert (cfg.seed, cfg.split_ratio, cfg.arch) == (42, 0.8, "paper")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epochs": 0},
            {"batch_size": 0},
            {"split_ratio": 1.0},
            {"split_ratio": 0.0},
            {"seed": -1},
            {"lr": -0.1},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestAccuracy:
    def test_perfect_and_partial(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
        preds = [0] * 33 + [1] * 2
        truths = [0] * 35
        assert accuracy(preds, truths) == pytest.approx(33 / 35)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            accuracy([1, 2], [1])

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            accuracy([], [])


class TestEvaluate:
    def test_zeroed_head_gives_uniform_loss(self):
        model = build_model("tiny", seed=0)
        head = model.layers[-1]
        head.weights[...] = 0.0
        head.bias[...] = 0.0
        samples = _samples(4, seed=1)  # labels 0..3, perfectly balanced
        loss, acc = evaluate(model, samples)
        assert loss == pytest.approx(math.log(4.0), abs=1e-6)
        assert acc == 0.25  # all-equal logits resolve to class 0

    def test_repeatable(self):
        model = build_model("tiny", seed=2)
        samples = _samples(5, seed=3)
        assert evaluate(model, samples) == evaluate(model, samples)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            evaluate(build_model("tiny", seed=0), [])


class TestMetricsCsv:
    def test_exact_bytes(self, tmp_path):
        history = [
            EpochMetrics(1, 1.5, 0.5, 1.25, 0.25, 0.0),
            EpochMetrics(2, 0.125, 0.875, 1.0, 0.75, 0.0),
        ]
        path = tmp_path / "m.csv"
        write_metrics_csv(history, path)
        assert path.read_bytes() == (
            b"epoch,train_loss,train_acc,val_loss,val_acc,elapsed_s\n"
            b"1,1.500000,0.500000,1.250000,0.250000,0.000000\n"
            b"2,0.125000,0.875000,1.000000,0.750000,0.000000\n"
        )

    def test_lf_only(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv([EpochMetrics(1, 0, 0, 0, 0, 0.0)], path)
        assert b"\r" not in path.read_bytes()


class TestRunTraining:
    def test_history_and_artifacts(self, tmp_path):
        model = build_model("tiny", seed=1)
        cfg = TrainConfig(
            epochs=2,
            batch_size=4,
            lr=1e-3,
            seed=7,
            arch="tiny",
            checkpoint_path=str(tmp_path / "best.cnck"),
            metrics_path=str(tmp_path / "m.csv"),
        )
        history, best = run_training(model, _split(), cfg)
        assert [m.epoch for m in history] == [1, 2]
        assert all(m.elapsed_s == 0.0 for m in history)
        assert all(math.isfinite(m.train_loss) and math.isfinite(m.val_loss) for m in history)
        assert isinstance(best, BestCheckpoint)
        assert best.epoch in (1, 2)
        assert best.path == cfg.checkpoint_path
        assert (tmp_path / "m.csv").read_text().count("\n") == 3
        load_checkpoint(cfg.checkpoint_path)  # file is a valid model

    def test_checkpoint_holds_best_epoch_weights(self, tmp_path):
        model = build_model("tiny", seed=4)
        cfg = TrainConfig(
            epochs=3,
            batch_size=4,
            lr=1e-3,
            seed=9,
            arch="tiny",
            checkpoint_path=str(tmp_path / "best.cnck"),
        )
        split = _split(seed=2)
        _, best = run_training(model, split, cfg)
        restored = load_checkpoint(cfg.checkpoint_path)
        _, val_acc = evaluate(restored, split.val)
        assert val_acc == pytest.approx(best.val_accuracy)

    def test_ties_keep_earlier_epoch(self, monkeypatch, tmp_path):
        scripted = iter(
            [
                (1.0, 0.9),
                (1.0, 0.5),  # epoch 1 val
                (1.0, 0.9),
                (1.0, 0.7),  # epoch 2 val: new best
                (1.0, 0.9),
                (1.0, 0.7),  # epoch 3 val: tie, keep epoch 2
                (1.0, 0.9),
                (1.0, 0.6),  # epoch 4 val: worse
            ]
        )
        monkeypatch.setattr("ctcnn.train.evaluate", lambda model, samples: next(scripted))
        model = build_model("tiny", seed=0)
        cfg = TrainConfig(epochs=4, batch_size=4, lr=0.0, seed=1, arch="tiny")
        _, best = run_training(model, _split(), cfg)
        assert best.epoch == 2
        assert best.val_accuracy == 0.7

    def test_zero_lr_freezes_metrics(self):
        model = build_model("tiny", seed=3)
        cfg = TrainConfig(epochs=3, batch_size=4, lr=0.0, seed=5, arch="tiny")
        history, _ = run_training(model, _split(seed=1), cfg)
        rows = {(m.train_loss, m.train_acc, m.val_loss, m.val_acc) for m in history}
        assert len(rows) == 1

    def test_identical_runs_byte_identical_outputs(self, tmp_path):
        split = _split(seed=6)
        outputs = []
        for tag in ("a", "b"):
            cfg = TrainConfig(
                epochs=2,
                batch_size=4,
                lr=1e-3,
                seed=11,
                arch="tiny",
                checkpoint_path=str(tmp_path / f"{tag}.cnck"),
                metrics_path=str(tmp_path / f"{tag}.csv"),
            )
            run_training(build_model("tiny", seed=11), split, cfg)
            outputs.append(
                ((tmp_path / f"{tag}.csv").read_bytes(), (tmp_path / f"{tag}.cnck").read_bytes())
            )
        assert outputs[0] == outputs[1]

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_numeric_failure_reports_epoch_and_batch(self):
        model = build_model("tiny", seed=0)
        model.layers[0].weights[...] = 1e38  # overflow on the first sample
        cfg = TrainConfig(epochs=1, batch_size=4, lr=1e-3, seed=0, arch="tiny")
        with pytest.raises(NumericError, match=r"epoch 1, batch 0"):
            run_training(model, _split(), cfg)

    def test_empty_split_side_rejected(self):
        model = build_model("tiny", seed=0)
        cfg = TrainConfig(epochs=1, batch_size=2, lr=1e-3, arch="tiny")
        with pytest.raises(ConfigError):
            run_training(model, DatasetSplit(train=_samples(4, 0), val=[], seed=0), cfg)
