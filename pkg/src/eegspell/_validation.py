"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_eeg_array(X, min_channels=1, min_samples=1, ndim=None, dtype=(np.float64, np.float32)):
    """Validate an EEG array whose last two axes are ``(channels, samples)``.

    Accepts a single ``(C, T)`` recording or a batch ``(n, C, T)``. Returns a
    float array; raises ``ValueError`` on wrong rank, too few channels or
    samples, or non-finite values.
    """
    X = check_array(X, ensure_2d=True, allow_nd=True, dtype=dtype, ensure_all_finite=True)
    if X.ndim not in (2, 3) or (ndim is not None and X.ndim != ndim):
        want = ndim if ndim is not None else "2 or 3"
        raise ValueError(f"expected a {want}-D array of (..., channels, samples), got shape {X.shape}")
    if X.shape[-2] < min_channels:
        raise ValueError(f"need at least {min_channels} channels, got {X.shape[-2]}")
    if X.shape[-1] < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {X.shape[-1]}")
    return X


def check_labels(y, n_classes, name="y"):
    y = np.asarray(y)
    if y.dtype.kind not in "iu":
        if y.dtype.kind == "f" and np.all(np.isfinite(y)) and np.all(y == np.round(y)):
            y = y.astype(np.int64)
        else:
            raise ValueError(f"{name} must hold integer class codes")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"{name} codes must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def check_random_state_seed(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
