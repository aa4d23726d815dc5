"""Single-step training loop, horizon evaluation and motion-field metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .baselines import mse_horizon, oracle_warp_forecast, persistence_forecast
from .datapipe import Dataset, SequenceSample, window_sequences
from .exceptions import InvalidConfig, NonFiniteLoss
from .loss import LossConfig, loss_terms
from .model import Forecaster, forecast

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "val_mse", "charbonnier", "div", "magn", "grad")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.2
    climatology_window: int = 3
    window_stride: int = 1
    select_best: bool = True  # restore the epoch with the lowest validation MSE
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise InvalidConfig("lr must be a positive finite number")
        if not 0 <= self.val_fraction < 1:
            raise InvalidConfig("val_fraction must lie in [0, 1)")
        if self.window_stride < 1:
            raise InvalidConfig("window_stride must be >= 1")
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig.from_dict(self.loss))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d


def stack_samples(samples: Sequence[SequenceSample], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (N, k, H, W) and first targets (N, H, W)."""
    x = np.stack([s.inputs for s in samples]).astype(dtype, copy=False)
    y = np.stack([s.targets[0] for s in samples]).astype(dtype, copy=False)
    return x, y


def _batch_loss(model: Forecaster, x: np.ndarray, y: np.ndarray, cfg: LossConfig):
    pred, w_hat = model.predict_next(x)
    terms = loss_terms(pred, ad.Tensor(y), w_hat, cfg)
    n = x.shape[0]
    return ad.scale(terms.total, 1.0 / n), terms, n


def validation_loss(model: Forecaster, x: np.ndarray, y: np.ndarray, cfg: LossConfig, batch_size: int = 64) -> tuple[float, float]:
    """Per-sample mean total loss and one-step MSE in eval mode."""
    was_training = model.training
    model.eval()
    total, sq, count = 0.0, 0.0, 0
    for i in range(0, len(x), batch_size):
        xb, yb = x[i:i + batch_size], y[i:i + batch_size]
        pred, w_hat = model.predict_next(xb)
        total += float(loss_terms(pred, ad.Tensor(yb), w_hat, cfg).total.data)
        d = pred.data.astype(np.float64) - yb
        sq += float(np.sum(d * d))
        count += len(xb)
    model.training = was_training
    if count == 0:
        return float("nan"), float("nan")
    return total / count, sq / (count * x[0, 0].size)


def train(
    model: Forecaster,
    train_samples: Sequence[SequenceSample],
    val_samples: Sequence[SequenceSample],
    cfg: TrainConfig = TrainConfig(),
    log_path=None,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Adam on next-frame prediction; writes one CSV row per epoch when ``log_path`` is set."""
    x_tr, y_tr = stack_samples(train_samples)
    x_va, y_va = stack_samples(val_samples) if len(val_samples) else (x_tr[:0], y_tr[:0])
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best: tuple[float, dict] | None = None
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = rng.permutation(len(x_tr))
            sums = dict.fromkeys(("train_loss", "charbonnier", "div", "magn", "grad"), 0.0)
            seen = 0
            for start in range(0, len(order), cfg.batch_size):
                idx = np.sort(order[start:start + cfg.batch_size])
                if len(idx) < 2:
                    continue  # batch norm needs two samples
                loss, terms, n = _batch_loss(model, x_tr[idx], y_tr[idx], cfg.loss)
                value = float(terms.total.data)
                if not math.isfinite(value):
                    raise NonFiniteLoss(f"loss became {value} at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                sums["train_loss"] += value
                sums["charbonnier"] += terms.charbonnier
                sums["div"] += terms.div
                sums["magn"] += terms.magn
                sums["grad"] += terms.grad
                seen += n
            row = {"epoch": epoch, **{k: v / max(seen, 1) for k, v in sums.items()}}
            row["val_loss"], row["val_mse"] = validation_loss(model, x_va, y_va, cfg.loss)
            history.append(row)
            if cfg.select_best and math.isfinite(row["val_mse"]) and (best is None or row["val_mse"] < best[0]):
                best = (row["val_mse"], _snapshot(model))
            if writer is not None:
                writer.writerow({k: row[k] for k in LOG_COLUMNS})
                fh.flush()
            if on_epoch is not None:
                on_epoch(row)
    finally:
        if fh is not None:
            fh.close()
    if best is not None:
        _restore(model, best[1])
    model.eval()
    return history


def best_epoch(history: Sequence[dict]) -> int | None:
    vals = [(r["val_mse"], r["epoch"]) for r in history if math.isfinite(r["val_mse"])]
    return min(vals)[1] if vals else None


def _snapshot(model: Forecaster) -> dict:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def _restore(model: Forecaster, snap: dict) -> None:
    for name, p in model.params.items():
        p.data[...] = snap[name]
    for name, st in model.bn.items():
        st.running_mean = snap[f"{name}.running_mean"].copy()
        st.running_var = snap[f"{name}.running_var"].copy()


# ------------------------------------------------------------------ evaluation
def evaluate(
    model: Forecaster | None,
    ds: Dataset,
    horizon: int = 6,
    k: int | None = None,
    batch_size: int = 64,
) -> dict[str, list[float]]:
    """Per-step MSE over every window of ``ds`` for the model and both baselines.

    ``ds`` must already be standardized.  The oracle is skipped when any
    sequence lacks ground-truth motion.
    """
    if model is None and k is None:
        raise InvalidConfig("pass a model or the number of input frames")
    k = model.config.k_input_frames if model is not None else k
    samples = window_sequences(ds, k, horizon)
    if not samples:
        raise InvalidConfig(f"no sequence is long enough for k={k} and horizon={horizon}")
    sums: dict[str, np.ndarray] = {}

    def add(name, per_step):
        sums[name] = sums.get(name, np.zeros(horizon)) + np.asarray(per_step)

    have_motion = all(s.true_motion is not None for s in samples)
    warp_params = model.config.warp if model is not None else None
    if model is not None:
        model.eval()
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x = np.stack([s.inputs for s in chunk])
            preds = forecast(model, x, horizon)
            for j, s in enumerate(chunk):
                add("model", mse_horizon([p[j] for p in preds], s.targets)[0])
    for s in samples:
        add("persistence", mse_horizon(persistence_forecast(s.inputs, horizon), s.targets)[0])
        if have_motion and warp_params is not None:
            add("oracle", mse_horizon(oracle_warp_forecast(s.inputs, s.true_motion, warp_params, horizon), s.targets)[0])
    return {name: (v / len(samples)).tolist() for name, v in sums.items()}


def motion_errors(estimated: np.ndarray, true: np.ndarray, margin: int = 8) -> tuple[float, float]:
    """Mean angular error (degrees) and mean endpoint error (px) over interior pixels.

    The angle is the absolute difference of the 2-D flow directions, wrapped to [0, 180].
    """
    est = np.asarray(estimated, dtype=np.float64)
    tru = np.asarray(true, dtype=np.float64)
    if margin:
        est = est[..., margin:-margin, margin:-margin]
        tru = tru[..., margin:-margin, margin:-margin]
    a_est = np.arctan2(est[..., 1, :, :], est[..., 0, :, :])
    a_tru = np.arctan2(tru[..., 1, :, :], tru[..., 0, :, :])
    diff = np.abs(np.angle(np.exp(1j * (a_est - a_tru))))
    epe = np.sqrt(((est - tru) ** 2).sum(axis=-3))
    return float(np.degrees(diff).mean()), float(epe.mean())


def write_history(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in LOG_COLUMNS})


__all__ = [
    "LOG_COLUMNS", "TrainConfig", "best_epoch", "evaluate", "motion_errors", "stack_samples", "train",
    "validation_loss", "write_history",
]
