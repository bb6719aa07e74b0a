"""Mini-batch training loop with Adam, plateau LR schedule and best-checkpoint selection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .. import rng as _rng
from ..errors import ConfigError, DivergedLoss, EmptyDataset
from .augment import augment
from .checkpoint import Checkpoint
from .model import DecoderConfig, bce_loss, build_decoder, collate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-5
    seed: int = 0
    augment: bool = True
    augment_with_attacks: bool = False
    rotation_axis: str = "z"

    def __post_init__(self):
        def bad(msg):
            raise ConfigError(f"train config: {msg}")

        if not isinstance(self.epochs, int) or self.epochs < 0:
            bad("epochs must be a non-negative integer")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            bad("batch_size must be >= 1")
        if not (math.isfinite(self.lr) and self.lr >= 0):
            bad("lr must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            bad("Adam betas must lie in [0, 1) and eps must be positive")
        if self.rotation_axis not in ("x", "y", "z"):
            bad("rotation_axis must be x, y or z")
        if not 0 < self.plateau_factor < 1 or self.plateau_patience < 0 or self.min_lr < 0:
            bad("invalid scheduler settings")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Sample:
    cloud: np.ndarray
    bits: np.ndarray
    name: str = ""


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    per_bit_acc: list
    lr: float


def _predict_stats(model, groups, bits, batch_size):
    """Mean loss, bitwise accuracy and per-bit accuracy over pre-grouped data."""
    dtype = next(model.parameters()).dtype
    losses, correct = [], []
    with torch.no_grad():
        for i in range(0, len(groups), batch_size):
            logits = model(*collate(groups[i:i + batch_size], dtype))
            target = torch.as_tensor(bits[i:i + batch_size], dtype=dtype)
            losses.append(float(bce_loss(logits, target)) * len(target))
            correct.append(((logits > 0).to(dtype) == target).cpu().numpy())
    hits = np.concatenate(correct)
    return sum(losses) / len(groups), float(hits.mean()), hits.mean(axis=0).tolist()


def evaluate(model, samples: list[Sample], batch_size: int = 64):
    groups = [model.group(s.cloud) for s in samples]
    bits = np.stack([s.bits for s in samples]).astype(np.float64)
    return _predict_stats(model, groups, bits, batch_size)


def train(train_set: list[Sample], val_set: list[Sample], config: DecoderConfig,
          tcfg: TrainConfig = TrainConfig(), log_path=None, dtype=torch.float32):
    """Train a decoder; returns ``(best_checkpoint, history)``.

    The checkpoint holds the parameters with the highest validation accuracy
    (earliest epoch on ties).  Epoch 0 in the history is the untrained model.
    Everything is driven by ``tcfg.seed``.

    Raises:
        EmptyDataset: no training (or validation) samples.
        DivergedLoss: a non-finite loss was produced.
    """
    if not train_set:
        raise EmptyDataset("training set is empty")
    if not val_set:
        raise EmptyDataset("validation set is empty")
    for s in train_set + val_set:
        if len(s.bits) != config.n_bits:
            raise EmptyDataset(f"sample {s.name!r} has {len(s.bits)} bits, decoder expects {config.n_bits}")

    model = build_decoder(config, seed=_rng.derive_seed(tcfg.seed, "init") >> 1, dtype=dtype)
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr, betas=(tcfg.beta1, tcfg.beta2), eps=tcfg.eps)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, mode="min", factor=tcfg.plateau_factor, patience=tcfg.plateau_patience, min_lr=tcfg.min_lr)

    val_groups = [model.group(s.cloud) for s in val_set]
    val_bits = np.stack([s.bits for s in val_set]).astype(np.float64)
    train_bits = np.stack([s.bits for s in train_set]).astype(np.float64)
    static_groups = None if tcfg.augment else [model.group(s.cloud) for s in train_set]

    def train_groups(epoch):
        if static_groups is not None:
            return static_groups
        return [model.group(augment(s.cloud, tcfg.seed, "train", epoch, i,
                                    with_attacks=tcfg.augment_with_attacks,
                                    rotation_axis=tcfg.rotation_axis))
                for i, s in enumerate(train_set)]

    history: list[EpochLog] = []
    t_loss, t_acc, _ = _predict_stats(model, train_groups(0), train_bits, 64)
    v_loss, v_acc, per_bit = _predict_stats(model, val_groups, val_bits, 64)
    history.append(EpochLog(0, t_loss, v_loss, t_acc, v_acc, per_bit, opt.param_groups[0]["lr"]))
    best = Checkpoint.from_model(model, best_val_acc=v_acc, epoch=0, meta={"train": tcfg.to_dict()})
    log.info("epoch 0: train_loss %.4f val_loss %.4f val_acc %.3f", t_loss, v_loss, v_acc)

    for epoch in range(1, tcfg.epochs + 1):
        groups = train_groups(epoch)
        perm = _rng.stream(tcfg.seed, "batches", epoch).permutation(len(groups))
        model.train()
        loss_sum, hit_sum = 0.0, 0.0
        for lo in range(0, len(perm), tcfg.batch_size):
            idx = perm[lo:lo + tcfg.batch_size]
            logits = model(*collate([groups[i] for i in idx], dtype))
            target = torch.as_tensor(train_bits[idx], dtype=dtype)
            loss = bce_loss(logits, target)
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(loss.detach()) * len(idx)
            hit_sum += float(((logits.detach() > 0).to(dtype) == target).to(dtype).sum())
        model.eval()
        t_loss = loss_sum / len(perm)
        t_acc = hit_sum / (len(perm) * config.n_bits)
        v_loss, v_acc, per_bit = _predict_stats(model, val_groups, val_bits, 64)
        lr = opt.param_groups[0]["lr"]
        history.append(EpochLog(epoch, t_loss, v_loss, t_acc, v_acc, per_bit, lr))
        log.info("epoch %d: train_loss %.4f val_loss %.4f val_acc %.3f lr %.2g",
                 epoch, t_loss, v_loss, v_acc, lr)
        if v_acc > best.best_val_acc:
            best = Checkpoint.from_model(model, best_val_acc=v_acc, epoch=epoch, meta={"train": tcfg.to_dict()})
        sched.step(v_loss)

    if log_path is not None:
        write_log(history, log_path, config.n_bits)
    return best, history


def write_log(history: list[EpochLog], path, n_bits: int) -> None:
    cols = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"]
    cols += [f"per_bit_acc_{i}" for i in range(n_bits)] + ["lr"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for h in history:
            writer.writerow([h.epoch, f"{h.train_loss:.6g}", f"{h.val_loss:.6g}", f"{h.train_acc:.6g}",
                             f"{h.val_acc:.6g}", *(f"{a:.6g}" for a in h.per_bit_acc), f"{h.lr:.6g}"])


def read_log(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
