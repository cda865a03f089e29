"""Training loop: RMSE loss, Adam, staged LR drops, warm restarts, accumulation.

Each epoch shuffles the training interactions under a per-epoch seed, walks
mini-batches of ``batch_size``, and applies one Adam step per accumulation
window (the window gradient is the size-weighted mean of the micro-batch RMSE
gradients). Validation MSE is computed every epoch; the best-scoring weights
are kept and reloaded, with fresh optimizer state, at every restart boundary.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .dataset import EncodedInteractions
from .model import ResDTA, save_checkpoint


class EmptySplitError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite training loss at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 1e-4
    adam_epsilon: float = 1e-8
    batch_size: int = 256
    epochs: int = 400
    lr_drop_period: int = 200
    lr_drop_factor: float = 0.1
    restart_period: int = 100
    accumulation_steps: int = 1
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        positive = (
            self.lr_initial, self.adam_epsilon, self.batch_size, self.epochs,
            self.lr_drop_period, self.lr_drop_factor, self.restart_period,
            self.accumulation_steps,
        )
        if any(v <= 0 for v in positive):
            raise ValueError("all TrainConfig values must be positive")
        if self.restart_period > self.epochs:
            raise ValueError("restart_period must not exceed epochs")


@dataclass
class EpochRecord:
    epoch: int
    train_rmse: float
    val_mse: float
    val_ci: float
    lr: float
    restarted: bool


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_rmse", "val_mse", "val_ci", "lr", "restarted"])
            for r in self.records:
                writer.writerow(
                    [r.epoch, repr(r.train_rmse), repr(r.val_mse), repr(r.val_ci),
                     repr(r.lr), int(r.restarted)]
                )

    def summary(self) -> dict:
        return {"best_epoch": self.best_epoch, "best_val_mse": self.best_val_mse}

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2), encoding="utf-8")


def rmse_loss(pred, target):
    """Root mean squared error; differentiable when given torch tensors."""
    if isinstance(pred, torch.Tensor) or isinstance(target, torch.Tensor):
        pred = torch.as_tensor(pred)
        target = torch.as_tensor(target)
        if pred.numel() == 0:
            raise ValueError("empty input")
        if pred.shape != target.shape:
            raise ValueError(f"length mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
        return torch.sqrt(torch.mean((pred - target) ** 2))
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("empty input")
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def schedule_lr(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for an epoch: initial value dropped every ``lr_drop_period``."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr_initial * cfg.lr_drop_factor ** (epoch // cfg.lr_drop_period)


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _batch_tensors(records: EncodedInteractions, idx: np.ndarray, dtype):
    pairs = records.pairs[idx]
    drugs = torch.as_tensor(records.drug_tokens[pairs[:, 0]], dtype=torch.long)
    proteins = torch.as_tensor(records.protein_tokens[pairs[:, 1]], dtype=torch.long)
    targets = torch.as_tensor(records.affinities[idx], dtype=dtype)
    return drugs, proteins, targets


def predict(model: ResDTA, records: EncodedInteractions, batch_size: int = 256) -> np.ndarray:
    """Inference over all records (dropout off); one prediction per record."""
    if len(records) == 0:
        return np.zeros(0, dtype=np.float64)
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    preds = []
    try:
        with torch.no_grad():
            for start in range(0, len(records), batch_size):
                idx = np.arange(start, min(start + batch_size, len(records)))
                drugs, proteins, _ = _batch_tensors(records, idx, dtype)
                preds.append(model(drugs, proteins).cpu().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(preds).astype(np.float64)


def fit(
    model: ResDTA,
    train_records: EncodedInteractions,
    val_records: EncodedInteractions,
    cfg: TrainConfig,
    checkpoint_path=None,
    log=None,
) -> tuple[ResDTA, TrainHistory]:
    """Train ``model`` in place and return it loaded with the best-validation weights.

    ``checkpoint_path`` additionally persists the best weights whenever the
    validation MSE improves; an ``{epoch}`` placeholder in the name is filled
    in and the previously saved best file is removed, so exactly one
    checkpoint remains. ``log`` is an optional callable taking an EpochRecord
    (the CLI passes a stderr printer).
    """
    if len(train_records) == 0 or len(val_records) == 0:
        raise EmptySplitError("train and validation splits must be non-empty")

    torch.manual_seed(cfg.seed)
    dtype = next(model.parameters()).dtype
    n = len(train_records)
    history = TrainHistory()
    best_state = None
    saved_checkpoint = None

    optimizer = _fresh_adam(model, cfg)
    for epoch in range(cfg.epochs):
        lr = schedule_lr(epoch, cfg)
        restarted = epoch > 0 and epoch % cfg.restart_period == 0
        if restarted and best_state is not None:
            model.load_state_dict(best_state)
            optimizer = _fresh_adam(model, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        order = _epoch_order(n, cfg.seed, epoch)
        batches = [order[s : s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]
        loss_sum = 0.0
        seen = 0
        for window_start in range(0, len(batches), cfg.accumulation_steps):
            window = batches[window_start : window_start + cfg.accumulation_steps]
            window_size = sum(len(b) for b in window)
            optimizer.zero_grad()
            for offset, batch_idx in enumerate(window):
                drugs, proteins, targets = _batch_tensors(train_records, batch_idx, dtype)
                loss = rmse_loss(model(drugs, proteins), targets)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(epoch, window_start + offset)
                (loss * (len(batch_idx) / window_size)).backward()
                loss_sum += loss.item() * len(batch_idx)
                seen += len(batch_idx)
            if cfg.clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            optimizer.step()

        val_pred = predict(model, val_records, cfg.batch_size)
        val_mse = metrics.mse(val_records.affinities, val_pred)
        try:
            val_ci = metrics.concordance_index(val_records.affinities, val_pred)
        except metrics.NoComparablePairsError:
            val_ci = float("nan")

        record = EpochRecord(
            epoch=epoch,
            train_rmse=loss_sum / seen,
            val_mse=val_mse,
            val_ci=val_ci,
            lr=lr,
            restarted=restarted,
        )
        history.records.append(record)
        if log is not None:
            log(record)

        if val_mse < history.best_val_mse:
            history.best_val_mse = val_mse
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            if checkpoint_path is not None:
                target = Path(str(checkpoint_path).format(epoch=epoch))
                save_checkpoint(model, target, epoch=epoch)
                if saved_checkpoint is not None and saved_checkpoint != target:
                    saved_checkpoint.unlink(missing_ok=True)
                saved_checkpoint = target

    if best_state is None:
        raise RuntimeError("validation MSE never became finite; no best weights to return")
    model.load_state_dict(best_state)
    return model, history


def _fresh_adam(model: ResDTA, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr_initial, eps=cfg.adam_epsilon)
