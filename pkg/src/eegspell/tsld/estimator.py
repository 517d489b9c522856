"""Scikit-learn estimator wrapping network, training and window voting."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_eeg_array, check_labels
from ..core import WINDOW_SAMPLES
from ..decoder import SHIFT, aggregate, window_predictions
from .checkpoint import load_checkpoint, save_checkpoint
from .network import TsldConfig, forward
from .training import TrainSettings, train


class TSLDClassifier(ClassifierMixin, BaseEstimator):
    """Temporal-spatial-latent-dynamics decoder for preprocessed EEG segments.

    ``X`` holds preprocessed segments ``(n_segments, n_channels, n_samples)``
    with ``n_samples >= window``. In the default dual-head mode ``y`` has
    columns ``[task, eye]``; with ``direct_mode=True`` it is a single column
    of character indices and there is no eye head.

    Training draws one random ``window``-sample slice per segment per step.
    Prediction slides the window by ``shift`` samples over each segment and
    aggregates by majority vote (or by averaging with ``soft_vote=True``).

    Parameters
    ----------
    n_freq_components : int
        Number of temporal kernels.
    temporal_kernel_len, temporal_stride : int
        Length and stride of the temporal convolution, in samples.
    n_subnetworks : int
        Outputs of the spatial convolution.
    gru_hidden : int
        Width of the recurrent state.
    use_gru : bool
        ``False`` replaces the GRU with a per-step linear map (ablation).
    direct_mode : bool
        Single task head, no eye head.
    n_task_classes : int or None
        Defaults to 4 (dual head) or 36 (direct mode).
    tie_temporal : bool
        Share temporal kernels across EEG channels.
    eye_weight : float
        Weight of the eye-state loss.
    lr, batch_size, epochs, max_steps, steps_per_epoch, clip_norm
        Optimiser settings, see :class:`TrainSettings`.
    validation_fraction : float
        Fraction of training segments held out to pick the best epoch.
    window, shift : int
        Window length and inference shift, in samples.
    soft_vote : bool
        Aggregate by mean probability instead of majority vote.
    random_state : int
        Seed for initialisation, window sampling and the validation split.
    """

    def __init__(
        self,
        n_freq_components=16,
        temporal_kernel_len=25,
        temporal_stride=1,
        n_subnetworks=16,
        gru_hidden=32,
        use_gru=True,
        direct_mode=False,
        n_task_classes=None,
        tie_temporal=True,
        eye_weight=1.0,
        lr=1e-3,
        batch_size=32,
        epochs=100,
        max_steps=None,
        steps_per_epoch=None,
        clip_norm=None,
        validation_fraction=0.0,
        window=WINDOW_SAMPLES,
        shift=SHIFT,
        soft_vote=False,
        random_state=0,
    ):
        self.n_freq_components = n_freq_components
        self.temporal_kernel_len = temporal_kernel_len
        self.temporal_stride = temporal_stride
        self.n_subnetworks = n_subnetworks
        self.gru_hidden = gru_hidden
        self.use_gru = use_gru
        self.direct_mode = direct_mode
        self.n_task_classes = n_task_classes
        self.tie_temporal = tie_temporal
        self.eye_weight = eye_weight
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.steps_per_epoch = steps_per_epoch
        self.clip_norm = clip_norm
        self.validation_fraction = validation_fraction
        self.window = window
        self.shift = shift
        self.soft_vote = soft_vote
        self.random_state = random_state

    def _make_config(self, n_channels) -> TsldConfig:
        n_task = self.n_task_classes or (36 if self.direct_mode else 4)
        return TsldConfig(
            n_channels=n_channels,
            n_freq_components=self.n_freq_components,
            temporal_kernel_len=self.temporal_kernel_len,
            temporal_stride=self.temporal_stride,
            n_subnetworks=self.n_subnetworks,
            gru_hidden=self.gru_hidden,
            n_task_classes=n_task,
            direct_mode=self.direct_mode,
            use_gru=self.use_gru,
            tie_temporal=self.tie_temporal,
            eye_weight=self.eye_weight,
        )

    def _settings(self) -> TrainSettings:
        return TrainSettings(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch,
            max_steps=self.max_steps,
            clip_norm=self.clip_norm,
            window=self.window,
        )

    def _split_y(self, y, config):
        y = np.asarray(y)
        if config.direct_mode:
            if y.ndim == 2:
                if y.shape[1] != 1:
                    raise ValueError("direct mode takes a single label column")
                y = y[:, 0]
            return check_labels(y, config.n_task_classes, "y"), None
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError(f"dual-head mode needs y of shape (n, 2) = [task, eye], got {y.shape}")
        return check_labels(y[:, 0], config.n_task_classes, "task labels"), check_labels(y[:, 1], config.n_eye_classes, "eye labels")

    def fit(self, X, y, eval_set=None):
        """Train on segments ``X`` with labels ``y``.

        ``eval_set=(X_val, y_val)`` selects the epoch with the lowest
        validation loss; otherwise ``validation_fraction`` of ``X`` is held out
        for that purpose (or nothing, when it is 0).
        """
        X = check_eeg_array(X, min_channels=1, min_samples=self.window, ndim=3)
        if len(X) != len(np.asarray(y)):
            raise ValueError(f"X has {len(X)} segments but y has {len(np.asarray(y))} rows")
        config = self._make_config(X.shape[1])
        y_task, y_eye = self._split_y(y, config)
        X_val = yt_val = ye_val = None
        if eval_set is not None:
            X_val = check_eeg_array(eval_set[0], min_samples=self.window, ndim=3)
            yt_val, ye_val = self._split_y(eval_set[1], config)
        elif self.validation_fraction:
            if not 0 < self.validation_fraction < 1:
                raise ValueError("validation_fraction must lie in [0, 1)")
            rng = np.random.default_rng([self.random_state, 3])
            perm = rng.permutation(len(X))
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            val, tr = perm[:n_val], np.sort(perm[n_val:])
            X_val, yt_val = X[val], y_task[val]
            ye_val = None if y_eye is None else y_eye[val]
            X, y_task = X[tr], y_task[tr]
            y_eye = None if y_eye is None else y_eye[tr]
        result = train(X, y_task, y_eye, config, self._settings(), self.random_state, X_val, yt_val, ye_val)
        self.config_ = config
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_steps_ = result.steps
        self.n_channels_ = config.n_channels
        self.classes_ = np.arange(config.n_task_classes)
        return self

    def _check_X(self, X, min_samples):
        check_is_fitted(self, "params_")
        X = check_eeg_array(X, min_samples=min_samples)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1] != self.n_channels_:
            raise ValueError(f"X has {X.shape[1]} channels, estimator was fitted with {self.n_channels_}")
        return X

    def window_proba(self, X, batch_size=64):
        """Pooled per-window probabilities for windows ``(n, C, window_len)``.

        Returns ``(task_probs, eye_probs)``; ``eye_probs`` is ``None`` in direct mode.
        """
        X = self._check_X(X, self.temporal_kernel_len)
        task, eye = [], []
        for lo in range(0, len(X), batch_size):
            trace = forward(X[lo : lo + batch_size], self.params_, self.config_)
            task.append(trace.task_probs)
            if trace.eye_probs is not None:
                eye.append(trace.eye_probs)
        return np.concatenate(task), (np.concatenate(eye) if eye else None)

    def decide(self, X):
        """One :class:`~eegspell.decoder.StageDecision` per segment."""
        X = self._check_X(X, self.window)
        return [
            aggregate(window_predictions(x, self.params_, self.config_, self.window, self.shift), self.soft_vote)
            for x in X
        ]

    def predict(self, X):
        """Segment labels: ``(n, 2)`` ``[task, eye]``, or ``(n,)`` in direct mode."""
        decisions = self.decide(X)
        if self.config_.direct_mode:
            return np.array([d.task for d in decisions])
        return np.array([[d.task, d.eye] for d in decisions])

    def predict_proba(self, X):
        """Adjusted task-class probabilities per segment."""
        return np.stack([d.task_probs for d in self.decide(X)])

    def predict_eye_proba(self, X):
        if self.config_.direct_mode:
            raise AttributeError("direct-mode estimator has no eye head")
        return np.stack([d.eye_probs for d in self.decide(X)])

    def score(self, X, y, sample_weight=None):
        """Fraction of segments whose every head is decided correctly."""
        pred = self.predict(X)
        y = np.asarray(y)
        if pred.ndim == 2:
            hit = np.all(pred == y.reshape(pred.shape), axis=1)
        else:
            hit = pred == y.reshape(-1)
        return float(np.average(hit, weights=sample_weight))

    def save(self, path, extra=None):
        check_is_fitted(self, "params_")
        meta = {"estimator": self.get_params(), **(extra or {})}
        save_checkpoint(path, self.params_, self.config_, meta)

    @classmethod
    def load(cls, path) -> TSLDClassifier:
        params, config, extra = load_checkpoint(path)
        est = cls(**extra.get("estimator", {}))
        est.config_ = config
        est.params_ = params
        est.n_channels_ = config.n_channels
        est.classes_ = np.arange(config.n_task_classes)
        est.history_ = []
        return est
