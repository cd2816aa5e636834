"""SGD training loop, evaluation metrics, checkpointing."""

import numpy as np
import pytest

import nrt
from nrt import tensor as T
from nrt.data import Dataset, make_trigger
from nrt.exceptions import TrainingDiverged, ValidationError
from nrt.models import Dense, Flatten, Model, build_small_cnn, load_model
from nrt.training import (TrainConfig, evaluate_accuracy, train,
                          trigger_success_rate)


def constant_model(k, favored, shape=(1, 8, 8)):
    """Model that predicts ``favored`` for every input."""
    n = int(np.prod(shape))
    bias = np.zeros(k, dtype=np.float32)
    bias[favored] = 10.0
    params = {"out.weight": T.Tensor(np.zeros((k, n), dtype=np.float32)),
              "out.bias": T.Tensor(bias)}
    return Model(shape, k, (Flatten(), Dense("out", k)), params)


def balanced_dataset(rng, k=10, per_class=5, shape=(1, 8, 8)):
    n = k * per_class
    images = rng.uniform(0, 1, size=(n,) + shape).astype(np.float32)
    labels = np.repeat(np.arange(k), per_class).astype(np.int64)
    return Dataset(images, labels, num_classes=k)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=-0.1)
        with pytest.raises(ValidationError):
            TrainConfig(checkpoint_every=2)   # no checkpoint_dir
        TrainConfig(learning_rate=0.0)        # explicitly allowed


class TestTrain:
    def test_zero_lr_leaves_params_unchanged(self, rng):
        train_set, test_set = nrt.synthetic_splits(3, 8, 4, (1, 16, 16), seed=2)
        model = build_small_cnn((1, 16, 16), 3, seed=0)
        before = {n: p.data.copy() for n, p in model.params.items()}
        train(model, train_set, test_set,
              TrainConfig(epochs=2, learning_rate=0.0, seed=0))
        for name, p in model.params.items():
            np.testing.assert_array_equal(p.data, before[name])

    def test_deterministic_records(self):
        train_set, test_set = nrt.synthetic_splits(3, 10, 5, (1, 16, 16), seed=2)
        records = []
        for _ in range(2):
            model = build_small_cnn((1, 16, 16), 3, seed=1)
            rec = train(model, train_set, test_set,
                        TrainConfig(epochs=2, seed=4))
            records.append((tuple(rec.losses), tuple(rec.clean_accuracy)))
        assert records[0] == records[1]

    def test_record_shape(self, tiny_trained):
        _, _, _, record = tiny_trained
        assert len(record.epochs) == 10
        assert len(record.losses) == 10
        assert all(0 <= a <= 1 for a in record.clean_accuracy)
        assert all(s is None for s in record.trigger_success)

    def test_learns_synthetic_problem(self, tiny_trained):
        _, _, _, record = tiny_trained
        assert record.clean_accuracy[-1] >= 0.95

    def test_divergence_aborts_with_location(self):
        train_set, test_set = nrt.synthetic_splits(3, 10, 5, (1, 16, 16), seed=2)
        model = build_small_cnn((1, 16, 16), 3, seed=1)
        with pytest.raises(TrainingDiverged) as err:
            train(model, train_set, test_set,
                  TrainConfig(epochs=3, learning_rate=1e9, seed=0))
        assert "epoch" in str(err.value) and "batch" in str(err.value)

    def test_shape_mismatch(self, rng):
        train_set, test_set = nrt.synthetic_splits(3, 5, 3, (1, 16, 16), seed=2)
        model = build_small_cnn((1, 28, 28), 3, seed=0)
        with pytest.raises(ValidationError):
            train(model, train_set, test_set, TrainConfig(epochs=1))

    def test_checkpoints_written(self, tmp_path):
        train_set, test_set = nrt.synthetic_splits(3, 6, 3, (1, 16, 16), seed=2)
        model = build_small_cnn((1, 16, 16), 3, seed=1)
        rec = train(model, train_set, test_set,
                    TrainConfig(epochs=4, seed=0, checkpoint_every=2,
                                checkpoint_dir=str(tmp_path)))
        saved = [p for p in rec.checkpoint_paths if p]
        assert len(saved) == 2
        ck = load_model(saved[-1])
        assert ck.metadata["epoch"] == 4

    def test_record_csv(self, tiny_trained, tmp_path):
        _, _, _, record = tiny_trained
        path = tmp_path / "rec.csv"
        record.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,loss,clean_acc,trigger_success"
        assert len(lines) == 11


class TestEvaluateAccuracy:
    def test_constant_model_on_balanced_set(self, rng):
        ds = balanced_dataset(rng, k=10, per_class=5)
        assert evaluate_accuracy(constant_model(10, 3), ds) == pytest.approx(0.1)

    def test_perfect_memorizer(self):
        train_set, _ = nrt.synthetic_splits(2, 15, 5, (1, 16, 16), seed=6)
        model = build_small_cnn((1, 16, 16), 2, seed=0)
        train(model, train_set, train_set,
              TrainConfig(epochs=25, learning_rate=0.01, batch_size=8, seed=0))
        assert evaluate_accuracy(model, train_set) == 1.0

    def test_empty_dataset(self):
        ds = Dataset(np.zeros((0, 1, 8, 8), dtype=np.float32),
                     np.zeros(0, dtype=np.int64), num_classes=2)
        with pytest.raises(ValidationError):
            evaluate_accuracy(constant_model(2, 0), ds)


class TestTriggerSuccessRate:
    def test_excludes_target_class_items(self, rng):
        ds = balanced_dataset(rng, k=4, per_class=6)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        # a model that always answers the target class scores 1.0 on the
        # non-target remainder
        rate = trigger_success_rate(constant_model(4, 2), ds, trig)
        assert rate == 1.0

    def test_all_target_class_raises(self, rng):
        images = rng.uniform(0, 1, size=(6, 1, 8, 8)).astype(np.float32)
        ds = Dataset(images, np.full(6, 2, dtype=np.int64), num_classes=4)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        with pytest.raises(ValidationError):
            trigger_success_rate(constant_model(4, 2), ds, trig)

    def test_noop_trigger_on_accurate_model(self, tiny_trained):
        model, _, test_set, record = tiny_trained
        trig = make_trigger("patch", 2, 0.0, 1, (1, 16, 16))
        rate = trigger_success_rate(model, test_set, trig)
        # alpha=0 leaves images unchanged; only existing misclassifications
        # into the target class count
        assert rate <= 1.0 - record.clean_accuracy[-1] + 0.05

    def test_never_target_model(self, rng):
        ds = balanced_dataset(rng, k=4, per_class=6)
        trig = make_trigger("patch", 2, 1.0, 2, (1, 8, 8))
        assert trigger_success_rate(constant_model(4, 0), ds, trig) == 0.0
