import numpy as np
import pytest

from tinyloc.data import DatasetSplit, LabeledSequence
from tinyloc.models import ModelConfig, build_model
from tinyloc.train import TrainConfig, TrainingDiverged, evaluate, length_batches, train


def seqs_of(lengths):
    return [LabeledSequence(np.zeros((n, 2)), np.zeros(n, int)) for n in lengths]


def test_length_batches_group_equal_lengths(rng):
    seqs = seqs_of([3, 5, 3, 3, 5, 7])
    for order in (None, rng):
        batches = length_batches(seqs, 2, order)
        assert sorted(i for b in batches for i in b) == list(range(6))
        for b in batches:
            assert len(b) <= 2 and len({len(seqs[i]) for i in b}) == 1


def test_length_batches_deterministic_without_rng():
    batches = length_batches(seqs_of([4, 2, 4, 2, 4]), 2)
    assert [list(b) for b in batches] == [[1, 3], [0, 2], [4]]


def test_training_is_reproducible(synth):
    cfg = ModelConfig("mamba", 4, 1, 4, 3, seed=2)
    a = train(build_model(cfg), synth, TrainConfig(epochs=2, seed=9))
    b = train(build_model(cfg), synth, TrainConfig(epochs=2, seed=9))
    assert a.history == b.history and a.best_epoch == b.best_epoch


def test_best_checkpoint_is_restored(synth):
    m = build_model(ModelConfig("mamba", 4, 1, 4, 3, seed=2))
    res = train(m, synth, TrainConfig(epochs=3, seed=1))
    assert res.best_val_f1 == max(h["val_f1"] for h in res.history)
    assert res.best_epoch == next(h["epoch"] for h in res.history if h["val_f1"] == res.best_val_f1)
    assert evaluate(res.model, synth.val, 3)[0] == res.best_val_f1


def test_nan_loss_raises_diverged(synth):
    m = build_model(ModelConfig("mamba", 4, 1, 4, 3))
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(m, synth, TrainConfig(epochs=1), loss_fn=lambda model, idx, x, y: model.loss(x, y) * np.nan)


def test_empty_training_split():
    ds = DatasetSplit([], [], [], 3, 4)
    with pytest.raises(ValueError):
        train(build_model(ModelConfig("mamba", 2, 1, 4, 3)), ds, TrainConfig(epochs=1))
