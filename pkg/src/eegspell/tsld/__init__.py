"""The TSLD network: temporal convolution, spatial convolution, GRU and two heads."""

from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    DivergenceError,
    ForwardTrace,
    LossBreakdown,
    TsldConfig,
    TsldParams,
    backward,
    forward,
    gru_forward,
    init_params,
    loss,
    loss_and_grad,
    spatial_conv,
    temporal_conv,
)
from .training import Adam, TrainResult, TrainSettings, sample_training_window, train


def __getattr__(name):
    # the estimator depends on the decoder, which itself imports this package
    if name == "TSLDClassifier":
        from .estimator import TSLDClassifier

        return TSLDClassifier
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "Adam",
    "DivergenceError",
    "ForwardTrace",
    "LossBreakdown",
    "TSLDClassifier",
    "TrainResult",
    "TrainSettings",
    "TsldConfig",
    "TsldParams",
    "backward",
    "forward",
    "gru_forward",
    "init_params",
    "load_checkpoint",
    "loss",
    "loss_and_grad",
    "sample_training_window",
    "save_checkpoint",
    "spatial_conv",
    "temporal_conv",
    "train",
]
