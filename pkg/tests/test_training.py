import math

import numpy as np
import pytest
import torch

from conftest import TINY_MODEL, synthetic_records
from resdta.model import ResDTA
from resdta.training import (
    EmptySplitError,
    NonFiniteLossError,
    TrainConfig,
    fit,
    predict,
    rmse_loss,
    schedule_lr,
)


def tiny_train_config(**overrides):
    base = dict(
        lr_initial=1e-3,
        batch_size=16,
        epochs=3,
        lr_drop_period=200,
        restart_period=3,
        seed=5,
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_rmse_loss_examples():
    assert rmse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse_loss([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-12)


def test_rmse_loss_homogeneity():
    rng = np.random.default_rng(0)
    p = rng.normal(size=20)
    t = rng.normal(size=20)
    base = rmse_loss(p, t)
    for c in (-3.0, 0.5, 7.0):
        assert rmse_loss(c * p, c * t) == pytest.approx(abs(c) * base, rel=1e-12)


def test_rmse_loss_validation():
    with pytest.raises(ValueError):
        rmse_loss([], [])
    with pytest.raises(ValueError):
        rmse_loss([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        rmse_loss(torch.zeros(2), torch.zeros(3))


def test_rmse_loss_torch_is_differentiable():
    pred = torch.tensor([1.0, 2.0], requires_grad=True)
    loss = rmse_loss(pred, torch.tensor([0.0, 0.0]))
    loss.backward()
    assert pred.grad is not None
    assert torch.all(torch.isfinite(pred.grad))


def test_schedule_lr_default_protocol_values():
    cfg = TrainConfig()
    assert schedule_lr(0, cfg) == pytest.approx(1e-4)
    assert schedule_lr(199, cfg) == pytest.approx(1e-4)
    assert schedule_lr(200, cfg) == pytest.approx(1e-5)
    assert schedule_lr(399, cfg) == pytest.approx(1e-5)


def test_schedule_lr_generic_formula():
    cfg = TrainConfig(lr_initial=0.5, lr_drop_period=2, lr_drop_factor=0.5, epochs=10, restart_period=10)
    assert [schedule_lr(e, cfg) for e in range(6)] == pytest.approx(
        [0.5, 0.5, 0.25, 0.25, 0.125, 0.125]
    )
    with pytest.raises(ValueError):
        schedule_lr(10, cfg)
    with pytest.raises(ValueError):
        schedule_lr(-1, cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, restart_period=20)
    with pytest.raises(ValueError):
        TrainConfig(accumulation_steps=-1)


def test_fit_requires_non_empty_splits():
    records = synthetic_records(n_interactions=8)
    model = ResDTA(TINY_MODEL, seed=0)
    with pytest.raises(EmptySplitError):
        fit(model, records.subset([]), records, tiny_train_config())
    with pytest.raises(EmptySplitError):
        fit(model, records, records.subset([]), tiny_train_config())


def test_fit_history_contract():
    records = synthetic_records(n_interactions=48, seed=1)
    train, val = records.subset(range(32)), records.subset(range(32, 48))
    cfg = tiny_train_config(epochs=4, restart_period=4)
    model, history = fit(ResDTA(TINY_MODEL, seed=0), train, val, cfg)

    assert len(history.records) == 4
    for record in history.records:
        assert record.train_rmse >= 0 and math.isfinite(record.train_rmse)
        assert record.lr == schedule_lr(record.epoch, cfg)
        assert not record.restarted  # restart_period == epochs, never fires
    assert history.best_val_mse == min(r.val_mse for r in history.records)
    assert history.best_epoch == min(
        r.epoch for r in history.records if r.val_mse == history.best_val_mse
    )
    # The returned model carries the best-epoch weights, not the last ones.
    from resdta.metrics import mse

    assert mse(val.affinities, predict(model, val)) == pytest.approx(
        history.best_val_mse, rel=1e-6
    )


def test_fit_is_deterministic_for_fixed_seed():
    records = synthetic_records(n_interactions=40, seed=2)
    train, val = records.subset(range(28)), records.subset(range(28, 40))
    cfg = tiny_train_config(epochs=3, restart_period=3)
    _, first = fit(ResDTA(TINY_MODEL, seed=1), train, val, cfg)
    _, second = fit(ResDTA(TINY_MODEL, seed=1), train, val, cfg)
    assert first.records == second.records


def test_fit_update_count_matches_batching(monkeypatch):
    # With accumulation_steps=1 every mini-batch is one Adam step.
    records = synthetic_records(n_interactions=40, seed=3)
    model = ResDTA(TINY_MODEL, seed=0)
    steps = []
    original = torch.optim.Adam.step

    def counting_step(self, *args, **kwargs):
        steps.append(1)
        return original(self, *args, **kwargs)

    monkeypatch.setattr(torch.optim.Adam, "step", counting_step)
    fit(model, records, records, tiny_train_config(epochs=2, restart_period=2, batch_size=16))
    assert len(steps) == 2 * math.ceil(40 / 16)


def test_gradient_accumulation_matches_joint_window_loss():
    # One Adam step per window; the window gradient is the size-weighted mean
    # of the micro-batch RMSE gradients. The oracle differentiates that mean
    # in a single autograd graph and snapshots the per-epoch trajectory.
    records = synthetic_records(n_interactions=48, seed=4)
    cfg = tiny_train_config(
        epochs=3, restart_period=3, batch_size=8, accumulation_steps=3, lr_initial=1e-3
    )
    model_a = ResDTA(TINY_MODEL, seed=9).double()
    model_a, history = fit(model_a, records, records, cfg)

    model_b = ResDTA(TINY_MODEL, seed=9).double()
    optimizer = torch.optim.Adam(model_b.parameters(), lr=cfg.lr_initial, eps=cfg.adam_epsilon)
    n = len(records)
    snapshots = []
    for epoch in range(cfg.epochs):
        for group in optimizer.param_groups:
            group["lr"] = schedule_lr(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        batches = [order[s : s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]
        for start in range(0, len(batches), cfg.accumulation_steps):
            window = batches[start : start + cfg.accumulation_steps]
            total = sum(len(b) for b in window)
            optimizer.zero_grad()
            loss = 0.0
            for batch in window:
                sub = records.subset(batch)
                pred = model_b(sub.drug_tokens[sub.pairs[:, 0]], sub.protein_tokens[sub.pairs[:, 1]])
                target = torch.as_tensor(sub.affinities, dtype=torch.float64)
                loss = loss + (len(batch) / total) * rmse_loss(pred, target)
            loss.backward()
            optimizer.step()
        snapshots.append(torch.cat([p.detach().reshape(-1).clone() for p in model_b.parameters()]))

    # fit() returned the weights of its best validation epoch; compare against
    # the oracle trajectory at that same epoch.
    params_a = torch.cat([p.detach().reshape(-1) for p in model_a.parameters()])
    params_b = snapshots[history.best_epoch]
    rel = (params_a - params_b).norm() / params_b.norm()
    assert rel < 1e-6


def test_fit_warm_restart_reloads_best_weights():
    records = synthetic_records(n_interactions=32, seed=6)
    # A learning rate of zero freezes the weights, so every epoch records the
    # same validation MSE and the restart reload is exactly observable.
    cfg = tiny_train_config(epochs=4, restart_period=2, lr_initial=1e-30)
    _, history = fit(ResDTA(TINY_MODEL, seed=2), records, records, cfg)
    flags = [r.restarted for r in history.records]
    assert flags == [False, False, True, False]
    mses = [r.val_mse for r in history.records]
    assert mses[2] == pytest.approx(min(mses[:2]), rel=1e-9)


def test_fit_aborts_on_non_finite_loss():
    records = synthetic_records(n_interactions=16, seed=7)
    bad = records.subset(range(16))
    bad.affinities[3] = np.inf
    with pytest.raises(NonFiniteLossError) as info:
        fit(ResDTA(TINY_MODEL, seed=0), bad, records, tiny_train_config())
    assert info.value.epoch == 0


def test_predict_deterministic_and_duplicated_records():
    records = synthetic_records(n_interactions=12, seed=8)
    dup = records.subset([0, 0, 5, 5])
    model = ResDTA(TINY_MODEL, seed=3)
    first = predict(model, dup)
    second = predict(model, dup)
    assert np.array_equal(first, second)
    assert first[0] == first[1]
    assert first[2] == first[3]


def test_predict_batch_size_independence():
    records = synthetic_records(n_interactions=30, seed=9)
    model = ResDTA(TINY_MODEL, seed=4)
    full = predict(model, records, batch_size=256)
    single = predict(model, records, batch_size=1)
    odd = predict(model, records, batch_size=7)
    assert np.allclose(full, single, atol=1e-5)
    assert np.allclose(full, odd, atol=1e-5)


def test_predict_leaves_training_mode_untouched():
    records = synthetic_records(n_interactions=4, seed=10)
    model = ResDTA(TINY_MODEL, seed=0)
    model.train()
    predict(model, records)
    assert model.training
    model.eval()
    predict(model, records)
    assert not model.training


def test_history_csv_round_trip(tmp_path):
    records = synthetic_records(n_interactions=24, seed=11)
    cfg = tiny_train_config(epochs=2, restart_period=2)
    _, history = fit(ResDTA(TINY_MODEL, seed=0), records, records, cfg)
    path = tmp_path / "history.csv"
    history.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_rmse,val_mse,val_ci,lr,restarted"
    assert len(lines) == 3
    history.write_summary(tmp_path / "summary.json")
    import json

    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["best_epoch"] == history.best_epoch


def test_training_reduces_loss_quickly():
    records = synthetic_records(n_interactions=64, seed=12, targets="additive")
    cfg = tiny_train_config(epochs=30, restart_period=30, lr_initial=3e-3)
    _, history = fit(ResDTA(TINY_MODEL, seed=5), records, records, cfg)
    assert history.records[-1].train_rmse < 0.8 * history.records[0].train_rmse
