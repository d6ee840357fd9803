"""Objectives, the early-stopping training loop, evaluation and baselines."""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, backward, no_grad, tsum, where
from .data import iter_batches, make_batch
from .model import ImtsMixer, count_parameters
from .optim import AdamW, NonFiniteGradientError

log = logging.getLogger(__name__)


class UndefinedLossError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


def _masked_error(pred, target, q_mask):
    pred = as_tensor(pred)
    q_mask = np.asarray(q_mask, dtype=bool)
    count = int(q_mask.sum())
    if count == 0:
        raise UndefinedLossError("no unmasked queries: loss is undefined")
    diff = where(q_mask, pred - Tensor(np.asarray(target, dtype=np.float64)), 0.0)
    return diff, count


def masked_mse(pred, target, q_mask):
    diff, count = _masked_error(pred, target, q_mask)
    return tsum(diff * diff) * (1.0 / count)


def masked_mae(pred, target, q_mask):
    q_mask = np.asarray(q_mask, dtype=bool)
    if not q_mask.any():
        raise UndefinedLossError("no unmasked queries: loss is undefined")
    pred = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    return float(np.abs(pred - target)[q_mask].mean())


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("nan")
    stopped_early: bool = False
    test_mse: float = float("nan")
    test_mae: float = float("nan")
    wall_seconds: float = 0.0
    params: int = 0
    params_by_module: dict = field(default_factory=dict)

    def to_json(self):
        out = asdict(self)
        out["epochs"] = [
            {"epoch": i, "train_loss": tl, "val_mse": vm}
            for i, (tl, vm) in enumerate(zip(self.train_loss, self.val_mse))
        ]
        del out["train_loss"], out["val_mse"]
        return out


def evaluate(model, dataset, batch_size=32):
    """Test MSE and MAE over every unmasked query of ``dataset``.

    Errors are accumulated per query, so the result does not depend on how
    the dataset is split into batches beyond floating-point summation order.
    """
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    for batch in iter_batches(dataset, batch_size):
        pred = model.predict(batch) if hasattr(model, "predict") else model(batch)
        err = (pred - batch.y)[batch.q_mask]
        sq_sum += float(np.sum(err * err))
        abs_sum += float(np.sum(np.abs(err)))
        count += err.size
    if count == 0:
        raise UndefinedLossError("dataset has no queries")
    return sq_sum / count, abs_sum / count


def train(config, train_set, val_set, test_set=None, n_channels=None, progress=None):
    """Mini-batch AdamW on masked MSE with early stopping on validation MSE.

    Returns ``(model, report)``; the model carries the parameters of the best
    validation epoch (or the initial ones if ``max_epochs == 0``).
    """
    if not train_set or not val_set:
        raise ValueError("train and validation splits must be nonempty")
    start = time.perf_counter()
    n_channels = n_channels or train_set[0].n_channels
    model = ImtsMixer(config, n_channels)
    opt = AdamW(model, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    best_state = model.state_dict()
    since_best = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_set))
        losses = []
        for b, batch in enumerate(iter_batches(train_set, config.batch_size, order)):
            if not batch.q_mask.any():
                continue
            model.zero_grad()
            loss = masked_mse(model(batch), batch.y, batch.q_mask)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}, batch {b}")
            backward(loss)
            try:
                opt.step()
            except NonFiniteGradientError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(loss.item())
        val_mse, _ = evaluate(model, val_set, config.batch_size)
        report.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        report.val_mse.append(val_mse)
        if not report.val_mse[:-1] or val_mse < report.best_val_mse:
            report.best_val_mse = val_mse
            report.best_epoch = epoch
            best_state = model.state_dict()
            since_best = 0
        else:
            since_best += 1
        if progress is not None:
            progress(epoch, report)
        log.debug("epoch %d train %.6f val %.6f", epoch, report.train_loss[-1], val_mse)
        if since_best >= config.patience:
            report.stopped_early = True
            break

    model.load_state_dict(best_state)
    report.params, report.params_by_module = count_parameters(model)
    if test_set:
        report.test_mse, report.test_mae = evaluate(model, test_set, config.batch_size)
    report.wall_seconds = time.perf_counter() - start
    return model, report


# --- baselines -----------------------------------------------------------------

class MeanBaseline:
    """Predicts each channel's mean training answer for every query."""

    def __init__(self, train_set):
        if not train_set:
            raise ValueError("mean baseline needs a nonempty training split")
        C = train_set[0].n_channels
        self.mean = np.zeros(C)
        for c in range(C):
            ys = np.concatenate([inst.answers[c] for inst in train_set])
            self.mean[c] = ys.mean() if ys.size else 0.0

    def predict(self, batch):
        return np.where(batch.q_mask, self.mean[None, :, None], 0.0)


class CarryForwardBaseline:
    """Predicts the last observed value of the channel, else the channel mean."""

    def __init__(self, fallback_mean):
        self.fallback = np.asarray(fallback_mean, dtype=np.float64)

    def predict(self, batch):
        counts = batch.obs_mask.sum(axis=-1)
        last = np.take_along_axis(batch.obs_v, np.maximum(counts - 1, 0)[..., None], axis=-1)[..., 0]
        value = np.where(counts > 0, last, self.fallback[None, :])
        return np.where(batch.q_mask, value[..., None], 0.0)


def baseline_mean(train_set):
    return MeanBaseline(train_set)


def baseline_carry_forward(train_set=None, fallback_mean=None):
    if fallback_mean is None:
        fallback_mean = MeanBaseline(train_set).mean
    return CarryForwardBaseline(fallback_mean)
