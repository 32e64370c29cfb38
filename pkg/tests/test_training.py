import csv
from types import SimpleNamespace

import numpy as np
import pytest

from rectnet.models import CnnBaselineConfig, RectNetConfig
from rectnet.training import (LOG_FIELDS, TrainConfig, TrainingDiverged, _batches, pretrain_cnn, split_by_volume,
                              train_cnn_baseline, train_rectnet)

TINY = RectNetConfig(cnn="I(1),C(3,4),P,C(2,4),FC(8)", hidden=6, mlp=(8,), patch=8)
TINY_CNN = CnnBaselineConfig(arch="I(7),C(3,4),P,C(2,4),FC(8)", patch=8)


class BlobSource:
    """Stacks with a bright centre blob for positives, noise for negatives, spread over four volumes."""

    def __init__(self, n=160, seed=0, poison=False):
        rng = np.random.default_rng(seed)
        self.labels = (np.arange(n) % 4 == 0).astype(np.int64)
        x = rng.random((n, 7, 8, 8)).astype(np.float32) * 0.3
        x[self.labels == 1, :, 3:5, 3:5] += 0.7
        if poison:
            x[:] = np.nan
        self.x = x
        self.entries = [SimpleNamespace(volume=f"v{i % 4}") for i in range(n)]

    def __len__(self):
        return len(self.labels)

    def stacks(self, idx):
        return self.x[idx]

    def center_patches(self, idx):
        return self.x[idx][:, 3:4]


def _cfg(**kw):
    base = dict(epochs=6, batch_size=16, lr=0.05, batches_per_epoch=8, patience=0, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_balanced_batches_are_half_positive():
    labels = np.array([1] * 5 + [0] * 95)
    for b in _batches(labels, _cfg(), np.random.default_rng(0)):
        assert len(b) == 16 and labels[b].sum() == 8


def test_pretraining_loss_falls_and_log_is_written(tmp_path):
    src = BlobSource()
    model, res = pretrain_cnn(src, TINY, _cfg(epochs=8), val_volumes=["v3"], log_path=tmp_path / "log.csv")
    losses = res.train_losses
    assert losses[-1] < losses[0]
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == LOG_FIELDS and len(rows) == 8
    assert res.best_val_loss == min(res.val_losses)


def test_training_is_bit_reproducible():
    src = BlobSource()
    a, ra = train_rectnet(src, TINY, _cfg(), val_volumes=["v3"])
    b, rb = train_rectnet(src, TINY, _cfg(), val_volumes=["v3"])
    assert ra.history == rb.history
    for (k, p), q in zip(a.named_params().items(), b.named_params().values()):
        assert p.tobytes() == q.tobytes(), k


def test_rectnet_learns_separable_stacks():
    src = BlobSource()
    pre, _ = pretrain_cnn(src, TINY, _cfg(epochs=10))
    model, res = train_rectnet(src, TINY, _cfg(epochs=10), pretrained=pre, val_volumes=["v3"])
    assert res.history[res.best_epoch - 1]["val_accuracy"] >= 0.9


def test_frozen_cnn_is_untouched():
    src = BlobSource()
    pre, _ = pretrain_cnn(src, TINY, _cfg(epochs=2))
    model, _ = train_rectnet(src, TINY, _cfg(epochs=2), pretrained=pre, freeze_cnn=True)
    for k, v in pre.cnn_params().items():
        assert np.array_equal(model.named_params()[k], v)
    assert not any(k.startswith("cnn.") for k in model.named_params(include_frozen=False))


def test_freezing_requires_pretrained_weights():
    with pytest.raises(ValueError):
        train_rectnet(BlobSource(), TINY, _cfg(), freeze_cnn=True)


def test_baseline_trains():
    model, res = train_cnn_baseline(BlobSource(), TINY_CNN, _cfg(), val_volumes=["v3"])
    assert res.val_losses[-1] < res.val_losses[0] or res.best_epoch > 1


def test_divergence_is_reported():
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train_rectnet(BlobSource(poison=True), TINY, _cfg())


@pytest.mark.parametrize("train", [pretrain_cnn, train_rectnet])
def test_empty_dataset(train):
    src = BlobSource()
    src.labels = src.labels[:0]
    src.entries = []
    with pytest.raises(ValueError):
        train(src, TINY, _cfg())


def test_early_stopping_restores_best_epoch():
    src = BlobSource()
    model, res = train_rectnet(src, TINY, _cfg(epochs=12, patience=2, lr=0.3), val_volumes=["v3"])
    assert len(res.history) <= 12
    from rectnet.training import evaluate
    va = np.flatnonzero([e.volume == "v3" for e in src.entries])
    loss, _ = evaluate(model, lambda i: src.stacks(va[i]), src.labels[va])
    assert loss == pytest.approx(res.best_val_loss, rel=1e-6)


def test_split_by_volume_is_disjoint_and_seeded():
    ids = [f"p{i:03d}" for i in range(10)]
    tr, va = split_by_volume(ids, 0.2, seed=1)
    assert len(va) == 2 and not set(tr) & set(va) and sorted(tr + va) == ids
    assert (tr, va) == split_by_volume(ids, 0.2, seed=1)
    assert split_by_volume(["a"], 0.5) == (["a"], [])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
