"""Random-window mini-batch training with Adam."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..core import WINDOW_SAMPLES, LabeledWindow, StageSegment
from .network import DivergenceError, TsldConfig, TsldParams, forward, init_params, loss, loss_and_grad

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "split", "loss_mt", "loss_es", "acc_task", "acc_eye")


@dataclass(frozen=True)
class TrainSettings:
    """Optimizer and schedule settings.

    ``steps_per_epoch=None`` means one pass of one random window per training
    segment. ``max_steps`` caps the total number of updates across epochs.
    """

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps_per_epoch: int | None = None
    max_steps: int | None = None
    clip_norm: float | None = None
    window: int = WINDOW_SAMPLES

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam moments must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainSettings:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainSettings keys: {sorted(unknown)}")
        return cls(**d)


def sample_offset(n_samples: int, rng: np.random.Generator, window: int = WINDOW_SAMPLES) -> int:
    if n_samples < window:
        raise ValueError(f"segment of {n_samples} samples is shorter than the window ({window})")
    return int(rng.integers(0, n_samples - window + 1))


def sample_training_window(segment: StageSegment, rng: np.random.Generator, window: int = WINDOW_SAMPLES) -> LabeledWindow:
    """Cut a uniformly placed ``window``-sample slice out of a segment."""
    data = segment.recording.data
    start = sample_offset(data.shape[1], rng, window)
    eye = None if segment.eye is None else int(segment.eye)
    return LabeledWindow(np.array(data[:, start : start + window]), int(segment.task), eye, start)


class Adam:
    def __init__(self, params: TsldParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: TsldParams, grads: TsldParams) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: TsldParams
    history: list[dict]
    best_epoch: int
    steps: int


def _batch(X, offsets, idx, window):
    return np.stack([X[i, :, o : o + window] for i, o in zip(idx, offsets)]).astype(np.float64, copy=False)


def _accuracy(probs, y):
    return float(np.mean(np.argmax(probs, axis=1) == y)) if probs is not None else float("nan")


def evaluate_windows(params, config, X, y_task, y_eye, offsets, window=WINDOW_SAMPLES, batch_size=64):
    """Loss and accuracy over fixed windows ``X[i, :, offsets[i]:offsets[i]+window]``."""
    n = len(X)
    sums = np.zeros(4)
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n))
        xb = _batch(X, offsets[idx], idx, window)
        eb = None if y_eye is None else y_eye[idx]
        trace = forward(xb, params, config)
        lb = loss(trace, y_task[idx], eb, config)
        k = len(idx)
        sums += k * np.array(
            [lb.task, lb.eye if lb.eye is not None else np.nan, _accuracy(trace.task_probs, y_task[idx]), _accuracy(trace.eye_probs, eb)]
        )
    return dict(zip(METRIC_FIELDS[2:], (sums / n).tolist()))


def train(
    X,
    y_task,
    y_eye,
    config: TsldConfig,
    settings: TrainSettings | None = None,
    seed=0,
    X_val=None,
    y_task_val=None,
    y_eye_val=None,
    init: TsldParams | None = None,
) -> TrainResult:
    """Train on preprocessed segments ``X`` of shape ``(n, C, T)``.

    Every step draws ``batch_size`` segments and one uniformly placed window
    from each. With a validation set, the parameters of the epoch with the
    lowest validation loss are returned; otherwise the final parameters.
    Raises :class:`DivergenceError` if the loss stops being finite.
    """
    settings = settings or TrainSettings()
    X = np.asarray(X)
    y_task = np.asarray(y_task, dtype=np.int64)
    y_eye = None if (y_eye is None or not config.has_eye_head) else np.asarray(y_eye, dtype=np.int64)
    n = len(X)
    if n == 0:
        raise ValueError("training split is empty")
    if config.has_eye_head and y_eye is None:
        raise ValueError("eye labels are required for a dual-head network")
    rng = np.random.default_rng([seed, 1])
    params = init_params(config, seed) if init is None else init.copy()
    opt = Adam(params, settings.lr, settings.beta1, settings.beta2, settings.adam_eps)
    window = settings.window
    steps_per_epoch = settings.steps_per_epoch or math.ceil(n / settings.batch_size)

    val = None
    if X_val is not None and len(X_val):
        val_rng = np.random.default_rng([seed, 2])
        val_offsets = np.array([sample_offset(X_val.shape[2], val_rng, window) for _ in range(len(X_val))])
        y_eye_val_ = None if not config.has_eye_head else np.asarray(y_eye_val, dtype=np.int64)
        val = (X_val, np.asarray(y_task_val, dtype=np.int64), y_eye_val_, val_offsets)

    history = []
    best = (math.inf, params.copy(), 0)
    steps = 0
    order = np.empty(0, dtype=np.int64)
    for epoch in range(1, settings.epochs + 1):
        sums = np.zeros(4)
        count = 0
        for _ in range(steps_per_epoch):
            if settings.max_steps is not None and steps >= settings.max_steps:
                break
            if len(order) < settings.batch_size:
                order = np.concatenate([order, rng.permutation(n)])
            idx, order = order[: settings.batch_size], order[settings.batch_size :]
            offsets = np.array([sample_offset(X.shape[2], rng, window) for _ in idx])
            xb = _batch(X, offsets, idx, window)
            eb = None if y_eye is None else y_eye[idx]
            value, grads, trace = loss_and_grad(params, xb, y_task[idx], eb, config)
            if settings.clip_norm is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > settings.clip_norm:
                    for g in grads.values():
                        g *= settings.clip_norm / norm
            opt.step(params, grads)
            steps += 1
            k = len(idx)
            count += k
            sums += k * np.array(
                [value.task, value.eye if value.eye is not None else np.nan, _accuracy(trace.task_probs, y_task[idx]), _accuracy(trace.eye_probs, eb)]
            )
        if count == 0:
            break
        for name, p in params.items():
            if not np.all(np.isfinite(p)):
                raise DivergenceError(f"parameter {name} became non-finite at epoch {epoch}")
        row = {"epoch": epoch, "split": "train", **dict(zip(METRIC_FIELDS[2:], (sums / count).tolist()))}
        history.append(row)
        logger.info("epoch %d train loss_mt=%.4f acc_task=%.3f", epoch, row["loss_mt"], row["acc_task"])
        if val is not None:
            vrow = {"epoch": epoch, "split": "val", **evaluate_windows(params, config, *val, window=window)}
            history.append(vrow)
            vloss = vrow["loss_mt"] + (config.eye_weight * vrow["loss_es"] if config.has_eye_head else 0.0)
            if not np.isfinite(vloss):
                raise DivergenceError(f"validation loss became non-finite at epoch {epoch}")
            if vloss < best[0]:
                best = (vloss, params.copy(), epoch)
    if val is None:
        return TrainResult(params, history, len([r for r in history if r["split"] == "train"]), steps)
    return TrainResult(best[1], history, best[2], steps)
