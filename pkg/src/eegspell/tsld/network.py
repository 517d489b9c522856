"""Temporal-spatial-latent-dynamics network: forward pass, loss and exact gradients.

Shapes (batch-leading, time-major inside the recurrent part)::

    window       (B, C, T)
    temporal     (B, C, F, T')         learned frequency components
    subnet       (B, T', F')           per-step spatial mixing of all C*F traces
    states       (B, T', H)            GRU states (or the linear adapter output)
    step probs   (B, T', n_classes)    per-step softmax of each head
    pooled       (B, n_classes)        temporal mean of the step probabilities

The temporal and spatial convolutions are both linear, so :func:`forward`
applies them as one fused ``(F', C, K)`` kernel; :func:`temporal_conv` and
:func:`spatial_conv` compute the two stages separately.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit

from ..core import EegSpellError


class DivergenceError(EegSpellError, ArithmeticError):
    """Raised when activations or the loss stop being finite."""


@dataclass(frozen=True)
class TsldConfig:
    n_channels: int = 32
    n_freq_components: int = 16
    temporal_kernel_len: int = 25
    temporal_stride: int = 1
    n_subnetworks: int = 16
    gru_hidden: int = 32
    n_task_classes: int = 4
    n_eye_classes: int = 2
    direct_mode: bool = False
    use_gru: bool = True
    tie_temporal: bool = True
    eye_weight: float = 1.0

    def __post_init__(self):
        for name in (
            "n_channels",
            "n_freq_components",
            "temporal_kernel_len",
            "temporal_stride",
            "n_subnetworks",
            "gru_hidden",
        ):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_task_classes < 2:
            raise ValueError(f"n_task_classes must be >= 2, got {self.n_task_classes}")
        if not self.direct_mode and self.n_eye_classes < 2:
            raise ValueError(f"n_eye_classes must be >= 2, got {self.n_eye_classes}")
        if self.eye_weight < 0:
            raise ValueError("eye_weight must be non-negative")

    @property
    def has_eye_head(self) -> bool:
        return not self.direct_mode

    def output_len(self, n_samples: int) -> int:
        if n_samples < self.temporal_kernel_len:
            raise ValueError(f"window of {n_samples} samples is shorter than the temporal kernel ({self.temporal_kernel_len})")
        return (n_samples - self.temporal_kernel_len) // self.temporal_stride + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TsldConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TsldConfig keys: {sorted(unknown)}")
        return cls(**d)


def param_specs(config: TsldConfig) -> dict[str, tuple[tuple[int, ...], int | None]]:
    """Map tensor name to ``(shape, fan_in)``; biases have ``fan_in=None``."""
    C, F, K = config.n_channels, config.n_freq_components, config.temporal_kernel_len
    Fp, H = config.n_subnetworks, config.gru_hidden
    specs = {}
    if config.tie_temporal:
        specs["temporal.weight"] = ((F, K), K)
        specs["temporal.bias"] = ((F,), None)
    else:
        specs["temporal.weight"] = ((C, F, K), K)
        specs["temporal.bias"] = ((C, F), None)
    specs["spatial.weight"] = ((Fp, C, F), C * F)
    specs["spatial.bias"] = ((Fp,), None)
    if config.use_gru:
        specs["gru.weight_ih"] = ((Fp, 3 * H), Fp)
        specs["gru.weight_hh"] = ((H, 3 * H), H)
        specs["gru.bias"] = ((3 * H,), None)
    else:
        specs["adapter.weight"] = ((Fp, H), Fp)
        specs["adapter.bias"] = ((H,), None)
    specs["task_head.weight"] = ((H, config.n_task_classes), H)
    specs["task_head.bias"] = ((config.n_task_classes,), None)
    if config.has_eye_head:
        specs["eye_head.weight"] = ((H, config.n_eye_classes), H)
        specs["eye_head.bias"] = ((config.n_eye_classes,), None)
    return specs


class TsldParams(dict):
    """Named parameter tensors (``name -> float64 array``)."""

    def copy(self) -> TsldParams:
        return TsldParams({k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> TsldParams:
        return TsldParams({k: np.zeros_like(v) for k, v in self.items()})

    def check(self, config: TsldConfig) -> None:
        specs = param_specs(config)
        if set(specs) != set(self):
            raise ValueError(f"parameter names {sorted(self)} do not match config {sorted(specs)}")
        for name, (shape, _) in specs.items():
            if self[name].shape != shape:
                raise ValueError(f"{name}: shape {self[name].shape}, config expects {shape}")
            if not np.all(np.isfinite(self[name])):
                raise DivergenceError(f"{name}: non-finite parameter")

    @property
    def n_parameters(self) -> int:
        return sum(v.size for v in self.values())


def init_params(config: TsldConfig, seed=0) -> TsldParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = TsldParams()
    for name, (shape, fan_in) in param_specs(config).items():
        if fan_in is None:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zero_params(config: TsldConfig) -> TsldParams:
    return TsldParams({name: np.zeros(shape) for name, (shape, _) in param_specs(config).items()})


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValueError(f"expected (C, T) or (B, C, T) input, got shape {x.shape}")
    return x, False


def temporal_conv(window, params: TsldParams, config: TsldConfig) -> np.ndarray:
    """Valid 1-D convolution of every channel with every temporal kernel.

    ``(C, T) -> (C, F, T')`` (or batched ``(B, C, T) -> (B, C, F, T')``), as a
    cross-correlation: ``out[c, f, t] = sum_k w[f, k] x[c, t*stride + k] + b[f]``.
    """
    x, single = _as_batch(window)
    if x.shape[1] != config.n_channels:
        raise ValueError(f"expected {config.n_channels} channels, got {x.shape[1]}")
    Tp = config.output_len(x.shape[2])
    K, s = config.temporal_kernel_len, config.temporal_stride
    frames = np.lib.stride_tricks.sliding_window_view(x, K, axis=2)[:, :, : (Tp - 1) * s + 1 : s]
    w, b = params["temporal.weight"], params["temporal.bias"]
    if config.tie_temporal:
        out = np.einsum("bctk,fk->bcft", frames, w) + b[None, None, :, None]
    else:
        out = np.einsum("bctk,cfk->bcft", frames, w) + b[None, :, :, None]
    return out[0] if single else out


def spatial_conv(x, params: TsldParams, config: TsldConfig) -> np.ndarray:
    """Mix all ``C*F`` traces at each timestep: ``(C, F, T') -> (F', T')``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    W = params["spatial.weight"]
    if x.shape[1:3] != W.shape[1:]:
        raise ValueError(f"spatial input has (C, F) = {x.shape[1:3]}, kernel expects {W.shape[1:]}")
    out = np.einsum("bcft,gcf->bgt", x, W) + params["spatial.bias"][None, :, None]
    return out[0] if single else out


def fused_kernel(params: TsldParams, config: TsldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Collapse temporal then spatial convolution into one ``(F', C, K)`` kernel and bias."""
    Ws, wt, bt = params["spatial.weight"], params["temporal.weight"], params["temporal.bias"]
    if config.tie_temporal:
        kernel = np.einsum("gcf,fk->gck", Ws, wt)
        bias = np.einsum("gcf,f->g", Ws, bt)
    else:
        kernel = np.einsum("gcf,cfk->gck", Ws, wt)
        bias = np.einsum("gcf,cf->g", Ws, bt)
    return kernel, bias + params["spatial.bias"]


def _time_slice(k: int, Tp: int, stride: int) -> slice:
    return slice(k, k + (Tp - 1) * stride + 1, stride)


def _time_major(x: np.ndarray) -> np.ndarray:
    """``(B, C, T) -> (B*T, C)`` contiguous."""
    return np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(-1, x.shape[1])


def subnet_sequence(x: np.ndarray, params: TsldParams, config: TsldConfig) -> np.ndarray:
    """Fused temporal+spatial stage on a batch: ``(B, C, T) -> (B, T', F')``."""
    B, C, T = x.shape
    Tp = config.output_len(T)
    kernel, bias = fused_kernel(params, config)
    G, _, K = kernel.shape
    # one GEMM against every tap, then sum the taps at their time shifts
    taps = (_time_major(x) @ kernel.transpose(1, 2, 0).reshape(C, K * G)).reshape(B, T, K, G)
    out = np.empty((B, Tp, G))
    out[...] = bias
    for k in range(K):
        out += taps[:, _time_slice(k, Tp, config.temporal_stride), k]
    return out


@dataclass
class GruCache:
    states: np.ndarray  # (B, T', H)
    update: np.ndarray
    reset: np.ndarray
    candidate: np.ndarray


def gru_forward(seq, params: TsldParams, config: TsldConfig | None = None) -> tuple[np.ndarray, GruCache]:
    """Run the GRU over ``(B, T', F')`` (or ``(T', F')``) from a zero initial state.

    Gate order in the packed weights is update, reset, candidate::

        z = sigmoid(W_z u + U_z h + b_z)
        r = sigmoid(W_r u + U_r h + b_r)
        n = tanh(W_n u + U_n (r * h) + b_n)
        h' = (1 - z) * h + z * n
    """
    u = np.asarray(seq, dtype=np.float64)
    single = u.ndim == 2
    if single:
        u = u[None]
    W_ih, W_hh, b = params["gru.weight_ih"], params["gru.weight_hh"], params["gru.bias"]
    H = W_hh.shape[0]
    B, Tp, _ = u.shape
    gi = u @ W_ih + b
    W_zr = np.ascontiguousarray(W_hh[:, : 2 * H])
    W_n = np.ascontiguousarray(W_hh[:, 2 * H :])
    states = np.empty((B, Tp, H))
    zs = np.empty((B, Tp, H))
    rs = np.empty((B, Tp, H))
    ns = np.empty((B, Tp, H))
    h = np.zeros((B, H))
    for t in range(Tp):
        g = gi[:, t]
        zr = expit(g[:, : 2 * H] + h @ W_zr)
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(g[:, 2 * H :] + (r * h) @ W_n)
        h = h + z * (n - h)
        states[:, t] = h
        zs[:, t] = z
        rs[:, t] = r
        ns[:, t] = n
    if not np.all(np.isfinite(h)):
        raise DivergenceError("GRU state became non-finite")
    cache = GruCache(states, zs, rs, ns)
    if single:
        return states[0], cache
    return states, cache


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardTrace:
    """Intermediate activations of one batched forward pass."""

    inputs: np.ndarray  # (B, C, T)
    subnet: np.ndarray  # (B, T', F')
    states: np.ndarray  # (B, T', H)
    gru: GruCache | None
    task_logits: np.ndarray  # (B, T', n_task)
    task_step_probs: np.ndarray
    task_probs: np.ndarray  # (B, n_task)
    eye_logits: np.ndarray | None = None
    eye_step_probs: np.ndarray | None = None
    eye_probs: np.ndarray | None = None
    temporal: np.ndarray | None = None  # (B, C, F, T'), only with keep_temporal=True

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]


def forward(window, params: TsldParams, config: TsldConfig, keep_temporal: bool = False) -> ForwardTrace:
    """Run the network on one window ``(C, T)`` or a batch ``(B, C, T)``.

    The trace is always batch-leading. Pooled probabilities are the temporal
    mean of per-step softmax outputs.
    """
    x, _ = _as_batch(window)
    if x.shape[1] != config.n_channels:
        raise ValueError(f"expected {config.n_channels} channels, got {x.shape[1]}")
    u = subnet_sequence(x, params, config)
    if config.use_gru:
        states, cache = gru_forward(u, params)
    else:
        states = u @ params["adapter.weight"] + params["adapter.bias"]
        cache = None
    task_logits = states @ params["task_head.weight"] + params["task_head.bias"]
    task_step = _softmax(task_logits)
    trace = ForwardTrace(x, u, states, cache, task_logits, task_step, task_step.mean(axis=1))
    if config.has_eye_head:
        eye_logits = states @ params["eye_head.weight"] + params["eye_head.bias"]
        eye_step = _softmax(eye_logits)
        trace.eye_logits, trace.eye_step_probs, trace.eye_probs = eye_logits, eye_step, eye_step.mean(axis=1)
    if keep_temporal:
        trace.temporal = temporal_conv(x, params, config)
    return trace


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    task: float
    eye: float | None


def _check_targets(labels, n, n_classes, name):
    y = np.atleast_1d(np.asarray(labels))
    if y.shape != (n,):
        raise ValueError(f"{name} needs {n} labels, got shape {y.shape}")
    if y.dtype.kind not in "iu" or y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"{name} must be integer codes in [0, {n_classes})")
    return y.astype(np.int64)


def _nll(probs, y):
    picked = probs[np.arange(len(y)), y]
    return -np.log(picked), picked


def loss(trace: ForwardTrace, task_labels, eye_labels=None, config: TsldConfig | None = None) -> LossBreakdown:
    """Batch-mean cross entropy of the pooled probabilities.

    ``total = task + eye_weight * eye``; in direct mode only the task term exists.
    """
    B = trace.batch_size
    yt = _check_targets(task_labels, B, trace.task_probs.shape[1], "task_labels")
    task = float(_nll(trace.task_probs, yt)[0].mean())
    if trace.eye_probs is None:
        return LossBreakdown(task, task, None)
    if eye_labels is None:
        raise ValueError("eye_labels required for a dual-head network")
    ye = _check_targets(eye_labels, B, trace.eye_probs.shape[1], "eye_labels")
    eye = float(_nll(trace.eye_probs, ye)[0].mean())
    weight = 1.0 if config is None else config.eye_weight
    return LossBreakdown(task + weight * eye, task, eye)


def _head_logit_grad(step_probs, pooled, y, scale):
    """Gradient of ``scale * mean_b(-log pooled[b, y_b])`` w.r.t. the per-step logits."""
    B, Tp, _ = step_probs.shape
    idx = np.arange(B)
    p_true = step_probs[idx, :, y]  # (B, T')
    coef = scale / (B * Tp * pooled[idx, y])  # (B,)
    grad = step_probs * (coef[:, None] * p_true)[:, :, None]
    grad[idx, :, y] -= coef[:, None] * p_true
    return grad


def _gru_backward(u, cache: GruCache, dstates, params, grads):
    W_ih, W_hh = params["gru.weight_ih"], params["gru.weight_hh"]
    H = W_hh.shape[0]
    W_zr_T = np.ascontiguousarray(W_hh[:, : 2 * H].T)
    W_n_T = np.ascontiguousarray(W_hh[:, 2 * H :].T)
    states, zs, rs, ns = cache.states, cache.update, cache.reset, cache.candidate
    B, Tp, _ = states.shape
    prev = np.zeros_like(states)
    prev[:, 1:] = states[:, :-1]
    dgi = np.empty((B, Tp, 3 * H))
    dh_next = np.zeros((B, H))
    for t in range(Tp - 1, -1, -1):
        dh = dstates[:, t] + dh_next
        z, r, n, hp = zs[:, t], rs[:, t], ns[:, t], prev[:, t]
        dn_pre = dh * z * (1.0 - n * n)
        dz_pre = dh * (n - hp) * z * (1.0 - z)
        drh = dn_pre @ W_n_T
        dr_pre = drh * hp * r * (1.0 - r)
        dgi[:, t, :H] = dz_pre
        dgi[:, t, H : 2 * H] = dr_pre
        dgi[:, t, 2 * H :] = dn_pre
        dh_next = dh * (1.0 - z) + drh * r + dgi[:, t, : 2 * H] @ W_zr_T
    flat = dgi.reshape(-1, 3 * H)
    grads["gru.weight_ih"] = u.reshape(-1, u.shape[2]).T @ flat
    grads["gru.bias"] = flat.sum(axis=0)
    dW_hh = np.empty_like(W_hh)
    dW_hh[:, : 2 * H] = prev.reshape(-1, H).T @ flat[:, : 2 * H]
    dW_hh[:, 2 * H :] = (rs * prev).reshape(-1, H).T @ flat[:, 2 * H :]
    grads["gru.weight_hh"] = dW_hh
    return dgi @ W_ih.T


def backward(trace: ForwardTrace, params: TsldParams, task_labels, eye_labels=None, config: TsldConfig | None = None) -> TsldParams:
    """Exact gradient of :func:`loss` with respect to every parameter tensor."""
    if config is None:
        raise ValueError("backward needs the network config")
    B = trace.batch_size
    grads = TsldParams()
    yt = _check_targets(task_labels, B, config.n_task_classes, "task_labels")
    heads = [("task_head", trace.task_step_probs, trace.task_probs, yt, 1.0)]
    if config.has_eye_head:
        ye = _check_targets(eye_labels, B, config.n_eye_classes, "eye_labels")
        heads.append(("eye_head", trace.eye_step_probs, trace.eye_probs, ye, config.eye_weight))
    states = trace.states
    H = states.shape[2]
    flat_states = states.reshape(-1, H)
    dstates = np.zeros_like(states)
    for name, step, pooled, y, scale in heads:
        dlogits = _head_logit_grad(step, pooled, y, scale)
        flat = dlogits.reshape(-1, dlogits.shape[2])
        grads[f"{name}.weight"] = flat_states.T @ flat
        grads[f"{name}.bias"] = flat.sum(axis=0)
        dstates += dlogits @ params[f"{name}.weight"].T

    u = trace.subnet
    if config.use_gru:
        du = _gru_backward(u, trace.gru, dstates, params, grads)
    else:
        grads["adapter.weight"] = u.reshape(-1, u.shape[2]).T @ dstates.reshape(-1, H)
        grads["adapter.bias"] = dstates.sum(axis=(0, 1))
        du = dstates @ params["adapter.weight"].T

    # fused kernel -> spatial and temporal tensors
    x = trace.inputs
    Tp = u.shape[1]
    K, s = config.temporal_kernel_len, config.temporal_stride
    B, C, T = x.shape
    G = u.shape[2]
    dtaps = np.zeros((B, T, K, G))
    for k in range(K):
        dtaps[:, _time_slice(k, Tp, s), k] = du
    dkernel = (_time_major(x).T @ dtaps.reshape(-1, K * G)).reshape(C, K, G).transpose(2, 0, 1)
    dbias = du.sum(axis=(0, 1))
    Ws, wt, bt = params["spatial.weight"], params["temporal.weight"], params["temporal.bias"]
    grads["spatial.bias"] = dbias
    if config.tie_temporal:
        grads["spatial.weight"] = np.einsum("gck,fk->gcf", dkernel, wt) + np.einsum("g,f->gf", dbias, bt)[:, None, :]
        grads["temporal.weight"] = np.einsum("gck,gcf->fk", dkernel, Ws)
        grads["temporal.bias"] = np.einsum("g,gcf->f", dbias, Ws)
    else:
        grads["spatial.weight"] = np.einsum("gck,cfk->gcf", dkernel, wt) + np.einsum("g,cf->gcf", dbias, bt)
        grads["temporal.weight"] = np.einsum("gck,gcf->cfk", dkernel, Ws)
        grads["temporal.bias"] = np.einsum("g,gcf->cf", dbias, Ws)
    return TsldParams({name: grads[name] for name in params})


def loss_and_grad(params, windows, task_labels, eye_labels, config) -> tuple[LossBreakdown, TsldParams, ForwardTrace]:
    trace = forward(windows, params, config)
    value = loss(trace, task_labels, eye_labels, config)
    if not np.isfinite(value.total):
        raise DivergenceError(f"loss became non-finite ({value.total})")
    return value, backward(trace, params, task_labels, eye_labels, config), trace
