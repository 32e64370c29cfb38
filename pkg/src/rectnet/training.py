"""Minibatch training loops: CNN pretraining, ReCTnet (fine-tuned or frozen CNN), baseline CNN."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .models import CnnBaselineConfig, CnnClassifier, Model, MultiChannelCNN, RectNetConfig, ReCTNet
from .nn.layers import nll_loss, softmax_nll_grad
from .nn.optim import SgdMomentum, default_milestones

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "val_loss", "val_accuracy", "lr")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.7
    milestones: tuple[int, ...] | None = None  # None: halve at 50% and 75% of epochs
    patience: int = 5
    balanced: bool = True
    batches_per_epoch: int | None = None  # None: ceil(n_train / batch_size)
    val_limit: int | None = None  # evaluate on a fixed random subset of at most this many entries
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.milestones is not None:
            object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf

    @property
    def train_losses(self) -> list[float]:
        return [h["train_loss"] for h in self.history]

    @property
    def val_losses(self) -> list[float]:
        return [h["val_loss"] for h in self.history]


Fetch = Callable[[np.ndarray], np.ndarray]


def evaluate(model: Model, fetch: Fetch, labels: np.ndarray, batch_size: int = 256) -> tuple[float, float]:
    """Mean NLL and argmax accuracy over a labelled set."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return math.nan, math.nan
    total, correct = 0.0, 0
    for s in range(0, len(labels), batch_size):
        idx = np.arange(s, min(s + batch_size, len(labels)))
        probs = model.forward(fetch(idx))
        loss, _, _ = nll_loss(probs, labels[idx])
        total += loss * len(idx)
        correct += int((probs.argmax(axis=1) == labels[idx]).sum())
    return total / len(labels), correct / len(labels)


def _batches(labels: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    n = len(labels)
    n_batches = cfg.batches_per_epoch or max(1, math.ceil(n / cfg.batch_size))
    if not cfg.balanced:
        order = np.concatenate([rng.permutation(n) for _ in range(math.ceil(n_batches * cfg.batch_size / n))])
        return [order[i * cfg.batch_size:(i + 1) * cfg.batch_size] for i in range(n_batches)]
    pools = [np.flatnonzero(labels == c) for c in (0, 1)]
    pools = [p for p in pools if len(p)]
    per = cfg.batch_size // len(pools)
    streams = []
    for p in pools:
        reps = math.ceil(n_batches * per / len(p))
        streams.append(np.concatenate([rng.permutation(p) for _ in range(reps)]))
    out = []
    for b in range(n_batches):
        batch = np.concatenate([s[b * per:(b + 1) * per] for s in streams])
        out.append(rng.permutation(batch))
    return out


def fit(model: Model, fetch_train: Fetch, y_train, fetch_val: Fetch | None, y_val, cfg: TrainConfig,
        log_path=None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train in place with momentum SGD; restores the parameters of the best validation epoch.

    Without a validation set the last epoch is kept and early stopping is off.
    """
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(y_train) == 0:
        raise ValueError("empty training set")
    y_val = np.asarray(y_val if y_val is not None else [], dtype=np.int64)
    has_val = fetch_val is not None and len(y_val) > 0
    rng = np.random.default_rng(cfg.seed)
    milestones = cfg.milestones if cfg.milestones is not None else default_milestones(cfg.epochs)
    opt = SgdMomentum(cfg.lr, cfg.momentum, milestones)
    result = TrainResult()
    best = None
    stale = 0
    writer = None
    fh = open(log_path, "w", newline="") if log_path else None
    try:
        if fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            writer.writeheader()
        for epoch in range(cfg.epochs):
            opt.set_epoch(epoch)
            losses = []
            for b, idx in enumerate(_batches(y_train, cfg, rng)):
                x = fetch_train(idx)
                probs = model.forward(x)
                loss, _, _ = nll_loss(probs, y_train[idx])
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss} at epoch {epoch + 1}, batch {b + 1} "
                                           f"(lr {opt.lr:g}); try a smaller learning rate")
                model.backward(softmax_nll_grad(probs, y_train[idx]))
                opt.step(model.named_params(include_frozen=False), model.named_grads())
                losses.append(loss)
            row = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "lr": opt.lr}
            if has_val:
                row["val_loss"], row["val_accuracy"] = evaluate(model, fetch_val, y_val)
            else:
                row["val_loss"], row["val_accuracy"] = math.nan, math.nan
            if not math.isfinite(row["train_loss"]):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch + 1}")
            result.history.append(row)
            if writer:
                writer.writerow(row)
                fh.flush()
            if progress:
                progress(row)
            log.info("epoch %d train %.4f val %.4f acc %.3f lr %g", row["epoch"], row["train_loss"],
                     row["val_loss"], row["val_accuracy"], row["lr"])
            if not has_val:
                result.best_epoch, result.best_val_loss = epoch + 1, math.nan
                continue
            if row["val_loss"] < result.best_val_loss:
                result.best_val_loss, result.best_epoch = row["val_loss"], epoch + 1
                best = {k: v.copy() for k, v in model.named_params().items()}
                stale = 0
            else:
                stale += 1
                if cfg.patience and stale >= cfg.patience:
                    log.info("early stop after epoch %d (best %d)", epoch + 1, result.best_epoch)
                    break
    finally:
        if fh:
            fh.close()
    if best is not None:
        model.load_params(best)
    return result


def split_by_volume(volume_ids: Sequence[str], val_fraction: float = 0.2, seed: int = 0) -> tuple[list, list]:
    """Disjoint train/validation volume lists (at least one of each when possible)."""
    vols = sorted(set(volume_ids))
    if len(vols) < 2 or val_fraction <= 0:
        return vols, []
    rng = np.random.default_rng(seed)
    order = [vols[i] for i in rng.permutation(len(vols))]
    n_val = min(len(vols) - 1, max(1, round(val_fraction * len(vols))))
    return sorted(order[n_val:]), sorted(order[:n_val])


def _index_split(source, val_volumes, cfg: TrainConfig):
    val_set = set(val_volumes)
    vol = np.array([e.volume in val_set for e in source.entries], dtype=bool)
    tr, va = np.flatnonzero(~vol), np.flatnonzero(vol)
    if cfg.val_limit is not None and len(va) > cfg.val_limit:
        rng = np.random.default_rng([cfg.seed, 1])
        va = np.sort(rng.choice(va, size=cfg.val_limit, replace=False))
    return tr, va


def _fetchers(source, train_idx, val_idx, center_only: bool):
    get = source.center_patches if center_only else source.stacks
    return (lambda i: get(train_idx[i])), (lambda i: get(val_idx[i]))


def pretrain_cnn(source, config: RectNetConfig, train_cfg: TrainConfig, val_volumes=(), log_path=None,
                 dtype=np.float32) -> tuple[CnnClassifier, TrainResult]:
    """Train the per-slice CNN with a temporary softmax on centre patches."""
    if len(source) == 0:
        raise ValueError("empty dataset")
    tr, va = _index_split(source, val_volumes, train_cfg)
    model = CnnClassifier(config, seed=train_cfg.seed, dtype=dtype)
    ft, fv = _fetchers(source, tr, va, center_only=True)
    result = fit(model, ft, source.labels[tr], fv, source.labels[va], train_cfg, log_path)
    return model, result


def train_rectnet(source, config: RectNetConfig, train_cfg: TrainConfig, pretrained: CnnClassifier | dict | None = None,
                  freeze_cnn: bool = False, val_volumes=(), log_path=None, dtype=np.float32) -> tuple[ReCTNet, TrainResult]:
    """End-to-end ReCTnet training on top of a pretrained CNN (or a cold start when ``pretrained`` is None)."""
    if len(source) == 0:
        raise ValueError("empty dataset")
    if freeze_cnn and pretrained is None:
        raise ValueError("freezing the CNN requires pretrained weights")
    model = ReCTNet(config, seed=train_cfg.seed, dtype=dtype)
    if pretrained is not None:
        model.load_cnn(pretrained.cnn_params() if isinstance(pretrained, CnnClassifier) else pretrained)
    if freeze_cnn:
        model.frozen.add("cnn")
    tr, va = _index_split(source, val_volumes, train_cfg)
    ft, fv = _fetchers(source, tr, va, center_only=False)
    result = fit(model, ft, source.labels[tr], fv, source.labels[va], train_cfg, log_path)
    return model, result


def train_cnn_baseline(source, config: CnnBaselineConfig, train_cfg: TrainConfig, val_volumes=(), log_path=None,
                       dtype=np.float32) -> tuple[MultiChannelCNN, TrainResult]:
    if len(source) == 0:
        raise ValueError("empty dataset")
    model = MultiChannelCNN(config, seed=train_cfg.seed, dtype=dtype)
    tr, va = _index_split(source, val_volumes, train_cfg)
    ft, fv = _fetchers(source, tr, va, center_only=False)
    result = fit(model, ft, source.labels[tr], fv, source.labels[va], train_cfg, log_path)
    return model, result
