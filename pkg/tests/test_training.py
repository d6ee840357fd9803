import numpy as np
import pytest

from imts_mixer.autograd import Tensor
from imts_mixer.config import TrainConfig
from imts_mixer.data import ImtsInstance, make_batch
from imts_mixer.model import ImtsMixer, count_parameters
from imts_mixer.training import (UndefinedLossError, baseline_carry_forward, baseline_mean,
                                 evaluate, masked_mae, masked_mse, train)

from conftest import random_dataset

SMALL = dict(dim=8, out_dim=6, mlp_hidden=8)


def test_masked_losses_examples():
    target = np.array([[0.0, 0.0, 0.0]])
    mask = np.array([[True, True, False]])
    pred = np.array([[1.0, -3.0, 100.0]])
    assert masked_mse(pred, target, mask).item() == 5.0
    assert masked_mae(pred, target, mask) == 2.0
    assert masked_mse(target, target, mask).item() == 0.0
    assert masked_mse(target + 1, target, mask).item() == 1.0
    assert masked_mae(target + 1, target, mask) == 1.0


def test_masked_losses_need_a_query():
    z = np.zeros((1, 2))
    with pytest.raises(UndefinedLossError):
        masked_mse(z, z, np.zeros((1, 2), bool))
    with pytest.raises(UndefinedLossError):
        masked_mae(z, z, np.zeros((1, 2), bool))


def test_masked_mse_gradient_ignores_masked_slots():
    pred = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    from imts_mixer.autograd import backward
    backward(masked_mse(pred, np.zeros(3), np.array([True, False, True])))
    assert pred.grad.tolist() == [1.0, 0.0, 3.0]


def test_zero_epochs_returns_initial_parameters():
    data = random_dataset(0, 10)
    cfg = TrainConfig(max_epochs=0, **SMALL)
    model, report = train(cfg, data[:6], data[6:])
    init = ImtsMixer(cfg, 3)
    for name, value in init.state_dict().items():
        assert np.array_equal(model.state_dict()[name], value)
    assert report.to_json()["epochs"] == [] and report.best_epoch == -1


def test_training_is_deterministic():
    data = random_dataset(1, 24)
    cfg = TrainConfig(max_epochs=6, batch_size=8, **SMALL)
    runs = [train(cfg, data[:16], data[16:20], data[20:]) for _ in range(2)]
    a, b = (r.to_json() for _, r in runs)
    a.pop("wall_seconds"), b.pop("wall_seconds")
    assert a == b
    for name, value in runs[0][0].state_dict().items():
        assert np.array_equal(runs[1][0].state_dict()[name], value)


def test_best_checkpoint_and_report_invariants():
    data = random_dataset(2, 30)
    cfg = TrainConfig(max_epochs=40, patience=3, batch_size=8, **SMALL)
    model, report = train(cfg, data[:18], data[18:24], data[24:])
    assert report.best_val_mse == min(report.val_mse)
    assert report.val_mse[report.best_epoch] == report.best_val_mse
    assert all(v >= report.best_val_mse for v in report.val_mse[report.best_epoch:])
    if report.stopped_early:
        assert len(report.val_mse) == report.best_epoch + 1 + cfg.patience
    # The returned model is the best checkpoint: re-evaluating gives the logged value.
    assert evaluate(model, data[18:24], cfg.batch_size)[0] == report.best_val_mse
    doc = report.to_json()
    for key in ("epochs", "best_epoch", "test_mse", "test_mae", "params", "wall_seconds"):
        assert key in doc


def test_constant_target_is_learned():
    rng = np.random.default_rng(3)
    data = []
    for _ in range(40):
        times = [np.sort(rng.uniform(0, 1, rng.integers(1, 5))) for _ in range(2)]
        queries = [np.sort(rng.uniform(1, 1.5, rng.integers(1, 4))) for _ in range(2)]
        data.append(ImtsInstance(times, [np.full(t.size, 0.7) for t in times], queries,
                                 [np.full(q.size, 0.7) for q in queries]))
    cfg = TrainConfig(max_epochs=50, patience=50, batch_size=8, **SMALL)
    _, report = train(cfg, data[:30], data[30:])
    assert report.val_mse[0] > 1e-2
    assert min(report.val_mse) < 1e-3


def test_evaluate_batch_size_independent():
    data = random_dataset(4, 37)
    model = ImtsMixer(TrainConfig(**SMALL), 3)
    a, b = evaluate(model, data, 1), evaluate(model, data, 32)
    assert abs(a[0] - b[0]) <= 1e-10 and abs(a[1] - b[1]) <= 1e-10


def test_evaluate_ignores_masked_query_padding():
    data = random_dataset(5, 6)
    model = ImtsMixer(TrainConfig(**SMALL), 3)

    base = evaluate(model, data, 6)
    batch = make_batch(data)
    wide = make_batch(data, k_max=batch.q_t.shape[-1] + 4)
    pred = model.predict(wide)
    err = (pred - wide.y)[wide.q_mask]
    assert abs(float(np.mean(err ** 2)) - base[0]) <= 1e-12


def test_evaluate_matches_validation_metric():
    data = random_dataset(6, 20)
    cfg = TrainConfig(max_epochs=3, batch_size=4, **SMALL)
    model, report = train(cfg, data[:12], data[12:])
    assert evaluate(model, data[12:], cfg.batch_size)[0] == report.best_val_mse


def test_parameter_count_breakdown():
    cfg = TrainConfig(dim=64, out_dim=32, n_blocks=0)
    total, parts = count_parameters(ImtsMixer(cfg, 5))
    assert parts["encoder"] == 4736 and "mixer" not in parts
    assert parts["decoder"] == 5 * (1 * 32 + 32 + 32 * 32 + 32) + 5
    assert total == sum(parts.values())
    _, parts1 = count_parameters(ImtsMixer(cfg.replace(n_blocks=1), 5))
    # gains (5 + 64), channel map 5x5 + 5, feature map 64x32 + 32
    assert parts1["mixer"] == 5 + 25 + 5 + 64 + 64 * 32 + 32


def _const_instance(value, n_obs=3):
    t = np.linspace(0, 0.5, n_obs)
    return ImtsInstance([t, t], [np.full(n_obs, value), np.full(n_obs, -value)],
                        [[1.0, 1.2], [1.1]], [[value, value], [-value]])


def test_baselines():
    train_set = [_const_instance(2.0), _const_instance(4.0)]
    mean = baseline_mean(train_set)
    assert mean.mean.tolist() == [3.0, -3.0]
    cf = baseline_carry_forward(train_set)
    assert evaluate(cf, [_const_instance(5.0)])[0] == 0.0
    empty = ImtsInstance([[], [0.1]], [[], [7.0]], [[1.0], [1.0]], [[0.0], [0.0]])
    pred = cf.predict(make_batch([empty]))
    assert pred[0, 0, 0] == 3.0 and pred[0, 1, 0] == 7.0


def test_mean_baseline_on_standardized_targets():
    rng = np.random.default_rng(0)
    data = [ImtsInstance([[0.1]], [[0.0]], [[1.0, 1.1]], [rng.normal(size=2)]) for _ in range(200)]
    ys = np.concatenate([i.answers[0] for i in data])
    mean = baseline_mean(data)
    mse = evaluate(mean, data)[0]
    assert mse == pytest.approx(ys.var(), rel=1e-12)
