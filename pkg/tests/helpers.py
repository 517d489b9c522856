"""Independent oracles shared by unit and acceptance tests."""

import numpy as np

from eegspell.tsld.network import TsldConfig, forward, init_params, loss, loss_and_grad

TINY = dict(n_channels=3, n_freq_components=2, n_subnetworks=2, gru_hidden=3, temporal_kernel_len=5)
TINY_T = 40


def ems_direct(x, alpha, eps):
    """O(T^2) weighted sums, written straight from the definition.

    Sums run in extended precision: the eps floor divides deviations by up to
    1e4, which would otherwise expose float64 rounding in the oracle itself.
    """
    x = np.asarray(x, dtype=np.longdouble)
    d = 1 - np.longdouble(alpha)
    T = x.shape[-1]
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(T):
        w = d ** np.arange(t, -1, -1)  # weight of sample j is d**(t-j)
        m[..., t] = (x[..., : t + 1] * w).sum(-1) / w.sum()
    for t in range(T):
        w = d ** np.arange(t, -1, -1)
        v[..., t] = (((x[..., : t + 1] - m[..., : t + 1]) ** 2) * w).sum(-1) / w.sum()
    return ((x - m) / np.maximum(np.sqrt(v), eps)).astype(np.float64)


def tiny_config(**kw):
    opts = dict(TINY)
    if kw.get("direct_mode"):
        opts["n_task_classes"] = 5
    opts.update(kw)
    return TsldConfig(**opts)


def tiny_problem(config, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((batch, config.n_channels, TINY_T))
    yt = rng.integers(0, config.n_task_classes, batch)
    ye = None if config.direct_mode else rng.integers(0, config.n_eye_classes, batch)
    params = init_params(config, seed)
    # non-zero biases so their gradients are exercised away from the origin
    for name in params:
        if name.endswith("bias"):
            params[name] = 0.1 * rng.standard_normal(params[name].shape)
    return params, X, yt, ye


def max_fd_error(config, h=1e-5, seed=0, floor=1e-6):
    """Worst relative error between analytic and central-difference gradients.

    Relative error uses ``max(|a|, |n|, floor)`` as the scale so coordinates
    whose true gradient is ~0 are compared absolutely at ``floor``.
    Returns ``{tensor_name: worst_error}``.
    """
    params, X, yt, ye = tiny_problem(config, seed=seed)
    _, grads, _ = loss_and_grad(params, X, yt, ye, config)

    def value(p):
        return loss(forward(X, p, config), yt, ye, config).total

    worst = {}
    for name, tensor in params.items():
        err = 0.0
        for idx in np.ndindex(tensor.shape):
            orig = tensor[idx]
            tensor[idx] = orig + h
            up = value(params)
            tensor[idx] = orig - h
            down = value(params)
            tensor[idx] = orig
            num = (up - down) / (2 * h)
            ana = grads[name][idx]
            err = max(err, abs(num - ana) / max(abs(num), abs(ana), floor))
        worst[name] = err
    return worst
