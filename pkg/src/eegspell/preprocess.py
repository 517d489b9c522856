"""Detrend, band-pass, common average reference and exponential moving standardization.

Each stage takes and returns an :class:`~eegspell.core.EegRecording`. The
array kernels underneath (``*_array``) work on any array whose last two axes
are ``(channels, samples)`` and always compute in float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin

from .core import DEFAULT_SAMPLING_RATE, EegRecording, InvariantError
from ._validation import check_eeg_array

STAGES = ("detrend", "bandpass", "car", "ems")


@dataclass(frozen=True)
class PreprocessConfig:
    band_low_hz: float = 4.0
    band_high_hz: float = 38.0
    ems_alpha: float = 1e-3
    ems_eps: float = 1e-4
    filter_order: int = 4

    def __post_init__(self):
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ValueError(f"need 0 < band_low_hz < band_high_hz, got {self.band_low_hz}, {self.band_high_hz}")
        if not 0 < self.ems_alpha < 1:
            raise ValueError(f"ems_alpha must lie in (0, 1), got {self.ems_alpha}")
        if self.ems_eps <= 0:
            raise ValueError(f"ems_eps must be positive, got {self.ems_eps}")
        if self.filter_order < 1:
            raise ValueError(f"filter_order must be >= 1, got {self.filter_order}")

    def check_rate(self, sampling_rate_hz: float) -> None:
        nyquist = sampling_rate_hz / 2
        if self.band_high_hz >= nyquist:
            raise ValueError(f"band edge {self.band_high_hz} Hz must lie below Nyquist ({nyquist} Hz)")

    def to_dict(self) -> dict:
        return asdict(self)


def detrend_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("detrend needs at least 2 samples")
    return signal.detrend(x, axis=-1, type="linear")


def bandpass_array(x: np.ndarray, cfg: PreprocessConfig, sampling_rate_hz: float) -> np.ndarray:
    cfg.check_rate(sampling_rate_hz)
    x = np.asarray(x, dtype=np.float64)
    sos = butter_sos(cfg, sampling_rate_hz)
    # sosfiltfilt's default edge padding cannot exceed the signal itself
    padlen = min(3 * (2 * len(sos) + 1), x.shape[-1] - 1)
    return signal.sosfiltfilt(sos, x, axis=-1, padlen=padlen)


def butter_sos(cfg: PreprocessConfig, sampling_rate_hz: float) -> np.ndarray:
    return signal.butter(
        cfg.filter_order, [cfg.band_low_hz, cfg.band_high_hz], btype="bandpass", output="sos", fs=sampling_rate_hz
    )


def car_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise ValueError("common average reference needs at least 2 channels")
    return x - x.mean(axis=-2, keepdims=True)


def ems_array(x: np.ndarray, alpha: float = 1e-3, eps: float = 1e-4) -> np.ndarray:
    """Exponential moving standardization along the last axis.

    With decay ``d = 1 - alpha`` and normaliser ``W_t = sum_{j<=t} d**j``::

        m_t = sum_j d**j x_{t-j} / W_t
        v_t = sum_j d**j (x_{t-j} - m_{t-j})**2 / W_t
        out = (x_t - m_t) / max(sqrt(v_t), eps)

    The weighted sums are first-order IIR filters, so the whole thing is O(T).
    The deviation is accumulated from first differences,
    ``D_t = W_t (x_t - m_t) = d D_{t-1} + d W_{t-1} (x_t - x_{t-1})``,
    which avoids cancellation when ``m_t`` closes in on ``x_t``. Constant
    stretches and the first sample therefore come out exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    decay = 1.0 - alpha
    t = np.arange(x.shape[-1])
    norm = -np.expm1((t + 1) * np.log(decay)) / alpha
    a = [1.0, -decay]
    step = np.zeros_like(x)
    step[..., 1:] = decay * norm[:-1] * np.diff(x, axis=-1)
    dev = signal.lfilter([1.0], a, step, axis=-1) / norm
    var = signal.lfilter([1.0], a, dev * dev, axis=-1) / norm
    return dev / np.maximum(np.sqrt(var), eps)


def detrend(rec: EegRecording) -> EegRecording:
    return rec.with_data(detrend_array(rec.data))


def bandpass(rec: EegRecording, cfg: PreprocessConfig | None = None) -> EegRecording:
    cfg = cfg or PreprocessConfig()
    return rec.with_data(bandpass_array(rec.data, cfg, rec.sampling_rate_hz))


def common_average_reference(rec: EegRecording) -> EegRecording:
    return rec.with_data(car_array(rec.data))


def exp_moving_standardize(rec: EegRecording, cfg: PreprocessConfig | None = None) -> EegRecording:
    cfg = cfg or PreprocessConfig()
    return rec.with_data(ems_array(rec.data, cfg.ems_alpha, cfg.ems_eps))


def pipeline_array(
    x: np.ndarray,
    cfg: PreprocessConfig,
    sampling_rate_hz: float = DEFAULT_SAMPLING_RATE,
    hook: Callable[[str, np.ndarray], None] | None = None,
) -> np.ndarray:
    out = x
    for name in STAGES:
        if name == "detrend":
            out = detrend_array(out)
        elif name == "bandpass":
            out = bandpass_array(out, cfg, sampling_rate_hz)
        elif name == "car":
            out = car_array(out)
        else:
            out = ems_array(out, cfg.ems_alpha, cfg.ems_eps)
        if hook is not None:
            hook(name, out)
    return out


def preprocess_pipeline(
    rec: EegRecording,
    cfg: PreprocessConfig | None = None,
    hook: Callable[[str, EegRecording], None] | None = None,
) -> EegRecording:
    """Run detrend -> band-pass -> CAR -> EMS on one recording.

    ``hook(stage_name, recording)`` is called after each stage, which lets
    callers inspect intermediate results.
    """
    cfg = cfg or PreprocessConfig()
    array_hook = None
    if hook is not None:
        def array_hook(name, arr):
            hook(name, rec.with_data(arr))
    return rec.with_data(pipeline_array(rec.data, cfg, rec.sampling_rate_hz, array_hook))


class EEGPreprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping the preprocessing pipeline.

    Parameters
    ----------
    band_low_hz, band_high_hz : float
        Butterworth band edges in Hz.
    ems_alpha : float
        Decay of the exponential moving standardization.
    ems_eps : float
        Floor applied to the running standard deviation.
    filter_order : int
        Butterworth order of each filtering pass.
    sampling_rate_hz : float
        Sampling rate of the arrays passed to :meth:`transform`.
    dtype : numpy dtype, default=np.float64
        Output dtype. float32 halves memory for large session sets.
    """

    def __init__(
        self,
        band_low_hz=4.0,
        band_high_hz=38.0,
        ems_alpha=1e-3,
        ems_eps=1e-4,
        filter_order=4,
        sampling_rate_hz=DEFAULT_SAMPLING_RATE,
        dtype=np.float64,
    ):
        self.band_low_hz = band_low_hz
        self.band_high_hz = band_high_hz
        self.ems_alpha = ems_alpha
        self.ems_eps = ems_eps
        self.filter_order = filter_order
        self.sampling_rate_hz = sampling_rate_hz
        self.dtype = dtype

    def _config(self) -> PreprocessConfig:
        return PreprocessConfig(self.band_low_hz, self.band_high_hz, self.ems_alpha, self.ems_eps, self.filter_order)

    def fit(self, X, y=None):
        X = check_eeg_array(X, min_channels=2)
        cfg = self._config()
        cfg.check_rate(self.sampling_rate_hz)
        self.n_channels_ = X.shape[-2]
        self.config_ = cfg
        return self

    def transform(self, X):
        X = check_eeg_array(X, min_channels=2)
        if hasattr(self, "n_channels_") and X.shape[-2] != self.n_channels_:
            raise ValueError(f"X has {X.shape[-2]} channels, transformer was fitted with {self.n_channels_}")
        cfg = self._config()
        out = np.empty(X.shape, dtype=self.dtype)
        # one recording at a time keeps float64 temporaries small
        for idx in np.ndindex(X.shape[:-2]):
            out[idx] = pipeline_array(X[idx], cfg, self.sampling_rate_hz)
        return out

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


def preprocess_dataset(dataset, cfg: PreprocessConfig | None = None, dtype=np.float32) -> np.ndarray:
    """Stack and preprocess every segment of a dataset into ``(n, C, T)``."""
    cfg = cfg or PreprocessConfig()
    if not dataset.segments:
        raise InvariantError("dataset has no segments")
    rate = dataset.segments[0].recording.sampling_rate_hz
    first = dataset.segments[0].recording
    out = np.empty((len(dataset.segments), first.n_channels, first.n_samples), dtype=dtype)
    for i, seg in enumerate(dataset.segments):
        out[i] = pipeline_array(seg.recording.data, cfg, rate)
    return out
