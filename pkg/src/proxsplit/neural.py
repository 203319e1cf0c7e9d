"""Layers with hand-written reverse-mode gradients, He initialization and Adam.

Layers operate on N x C x H x W arrays. Convolutions are cross-correlations
with reflect padding so spatial size is kept; the transposed convolution is a
stride-2, 4-tap upsampler that exactly doubles H and W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    correlate2d,
    correlate2d_adjoint,
    pad_reflect,
    pad_reflect_adjoint,
)

KINDS = ("conv", "relu", "batchnorm", "transposed_conv")
BN_MOMENTUM = 0.9
BN_EPS = 1e-5
UP_KERNEL = 4


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.kind == "conv" and self.kernel_size % 2 == 0:
            raise ValueError("conv kernel size must be odd")
        if self.kind == "transposed_conv" and (self.kernel_size, self.stride) != (UP_KERNEL, 2):
            raise ValueError("transposed_conv supports kernel 4, stride 2 only")
        if self.kind in ("relu", "batchnorm") and self.in_channels != self.out_channels:
            raise ValueError(f"{self.kind} cannot change the channel count")


def conv(cin, cout, k=3):
    return LayerSpec("conv", cin, cout, k)


def relu(c):
    return LayerSpec("relu", c, c, 1)


def batchnorm(c):
    return LayerSpec("batchnorm", c, c, 1)


def transposed_conv(cin, cout):
    return LayerSpec("transposed_conv", cin, cout, UP_KERNEL, 2)


class ParamStore:
    """Named trainable tensors, non-trainable buffers and Adam state."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add_param(self, name, value):
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def add_buffer(self, name, value):
        self.buffers[name] = value

    def view(self, prefix: str) -> "ParamView":
        return ParamView(self, prefix)

    def tensors(self) -> dict[str, np.ndarray]:
        """Every parameter and buffer, sorted by name."""
        out = dict(self.params)
        out.update(self.buffers)
        return dict(sorted(out.items()))

    def copy(self) -> "ParamStore":
        new = ParamStore()
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.buffers = {k: v.copy() for k, v in self.buffers.items()}
        new.m = {k: v.copy() for k, v in self.m.items()}
        new.v = {k: v.copy() for k, v in self.v.items()}
        new.step = self.step
        return new

    def astype(self, dtype) -> "ParamStore":
        new = self.copy()
        for d in (new.params, new.buffers, new.m, new.v):
            for k in d:
                d[k] = d[k].astype(dtype)
        return new


class ParamView:
    """Prefix-scoped access into a ParamStore (``view["weight"]``)."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def key(self, name):
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name):
        k = self.key(name)
        if k in self.store.params:
            return self.store.params[k]
        return self.store.buffers[k]

    def __setitem__(self, name, value):
        k = self.key(name)
        if k in self.store.params:
            self.store.params[k] = value
        else:
            self.store.buffers[k] = value


def bilinear_upsample_weights(channels: int) -> np.ndarray:
    """Weights making transposed_conv a per-channel bilinear 2x upsampler."""
    f = np.array([0.25, 0.75, 0.75, 0.25])
    w = np.zeros((channels, channels, UP_KERNEL, UP_KERNEL))
    w[np.arange(channels), np.arange(channels)] = np.outer(f, f)
    return w


def init_layer(store: ParamStore, prefix: str, spec: LayerSpec, rng: np.random.Generator, dtype):
    view = store.view(prefix)
    if spec.kind == "conv":
        fan_in = spec.in_channels * spec.kernel_size**2
        w = rng.standard_normal((spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size))
        store.add_param(view.key("weight"), (w * np.sqrt(2.0 / fan_in)).astype(dtype))
        store.add_param(view.key("bias"), np.zeros(spec.out_channels, dtype=dtype))
    elif spec.kind == "batchnorm":
        c = spec.out_channels
        store.add_param(view.key("gain"), np.ones(c, dtype=dtype))
        store.add_param(view.key("shift"), np.zeros(c, dtype=dtype))
        store.add_buffer(view.key("running_mean"), np.zeros(c, dtype=dtype))
        store.add_buffer(view.key("running_var"), np.ones(c, dtype=dtype))
    elif spec.kind == "transposed_conv":
        if spec.in_channels != spec.out_channels:
            raise ValueError("bilinear initialization needs in_channels == out_channels")
        store.add_param(view.key("weight"), bilinear_upsample_weights(spec.in_channels).astype(dtype))
        store.add_param(view.key("bias"), np.zeros(spec.out_channels, dtype=dtype))


def init_params(specs, seed: int, prefix: str = "", dtype=np.float64, store=None) -> ParamStore:
    """He-initialized conv weights, zero biases, unit BN gains; layer i lives under ``{prefix}{i}``."""
    store = ParamStore() if store is None else store
    rng = np.random.default_rng(seed)
    for i, spec in enumerate(specs):
        init_layer(store, f"{prefix}{i}", spec, rng, dtype)
    return store


# --------------------------------------------------------------------------
# forward / backward


def _check_channels(spec, x):
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"{spec.kind} expects {spec.in_channels} channels, got shape {x.shape}")


def _transposed_full(xp, w):
    # scatter every input pixel's 4x4 footprint with stride 2
    n, _, h, wd = xp.shape
    cout = w.shape[1]
    t = np.tensordot(xp, w, axes=([1], [0]))  # N,H,W,Cout,4,4
    out = np.zeros((n, cout, 2 * h + 2, 2 * wd + 2), dtype=xp.dtype)
    for u in range(UP_KERNEL):
        for v in range(UP_KERNEL):
            out[:, :, u:u + 2 * h:2, v:v + 2 * wd:2] += t[..., u, v].transpose(0, 3, 1, 2)
    return out


def layer_forward(spec: LayerSpec, p, x, mode: str = "train"):
    """Apply one layer; returns (output, cache for layer_backward)."""
    _check_channels(spec, x)
    if spec.kind == "conv":
        w, b = p["weight"], p["bias"]
        out, cols = correlate2d(x, w, return_cols=True)
        return out + b[None, :, None, None], (cols,)
    if spec.kind == "relu":
        mask = x > 0
        return x * mask, (mask,)
    if spec.kind == "batchnorm":
        gain, shift = p["gain"], p["shift"]
        if mode == "train":
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (count / (count - 1)) if count > 1 else var
            p["running_mean"] = BN_MOMENTUM * p["running_mean"] + (1 - BN_MOMENTUM) * mean
            p["running_var"] = BN_MOMENTUM * p["running_var"] + (1 - BN_MOMENTUM) * unbiased
        else:
            mean, var = p["running_mean"], p["running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        out = gain[None, :, None, None] * xhat + shift[None, :, None, None]
        return out, (xhat, inv, mode)
    if spec.kind == "transposed_conv":
        w, b = p["weight"], p["bias"]
        xp = pad_reflect(x, (1, 1, 1, 1))
        full = _transposed_full(xp, w)
        h, wd = x.shape[2:]
        out = full[:, :, 3:3 + 2 * h, 3:3 + 2 * wd] + b[None, :, None, None]
        return np.ascontiguousarray(out), (xp,)
    raise ValueError(spec.kind)


def layer_backward(spec: LayerSpec, p, cache, grad_out):
    """Return (grad wrt input, {param name: grad})."""
    if spec.kind == "conv":
        (cols,) = cache
        w = p["weight"]
        if grad_out.shape[1] != w.shape[0]:
            raise RuntimeError("cache / spec mismatch in conv backward")
        g2 = grad_out.transpose(1, 0, 2, 3).reshape(w.shape[0], -1)
        gw = (g2 @ cols.T).reshape(w.shape)
        gb = g2.sum(axis=1)
        gx = correlate2d_adjoint(grad_out, w)
        return gx, {"weight": gw, "bias": gb}
    if spec.kind == "relu":
        (mask,) = cache
        return grad_out * mask, {}
    if spec.kind == "batchnorm":
        xhat, inv, mode = cache
        gain = p["gain"]
        g_gain = (grad_out * xhat).sum(axis=(0, 2, 3))
        g_shift = grad_out.sum(axis=(0, 2, 3))
        gxhat = grad_out * gain[None, :, None, None]
        if mode == "train":
            mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = (gxhat - mean_g - xhat * mean_gx) * inv[None, :, None, None]
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, {"gain": g_gain, "shift": g_shift}
    if spec.kind == "transposed_conv":
        (xp,) = cache
        w = p["weight"]
        n, _, hp, wp = xp.shape
        h, wd = hp - 2, wp - 2
        gfull = np.zeros((n, w.shape[1], 2 * hp + 2, 2 * wp + 2), dtype=grad_out.dtype)
        gfull[:, :, 3:3 + 2 * h, 3:3 + 2 * wd] = grad_out
        # gt[n, i, j, co, u, v] = gfull[n, co, 2i+u, 2j+v]
        gt = np.empty((n, hp, wp, w.shape[1], UP_KERNEL, UP_KERNEL), dtype=grad_out.dtype)
        for u in range(UP_KERNEL):
            for v in range(UP_KERNEL):
                gt[..., u, v] = gfull[:, :, u:u + 2 * hp:2, v:v + 2 * wp:2].transpose(0, 2, 3, 1)
        gxp = np.tensordot(gt, w, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(xp, gt, axes=([0, 2, 3], [0, 1, 2]))  # Ci,Co,4,4
        gb = grad_out.sum(axis=(0, 2, 3))
        return pad_reflect_adjoint(np.ascontiguousarray(gxp), (1, 1, 1, 1)), {"weight": gw, "bias": gb}
    raise ValueError(spec.kind)


def sequential_forward(specs, store: ParamStore, prefix: str, x, mode="train"):
    caches = []
    for i, spec in enumerate(specs):
        x, c = layer_forward(spec, store.view(f"{prefix}{i}"), x, mode)
        caches.append(c)
    return x, caches


def sequential_backward(specs, store: ParamStore, prefix: str, caches, grad_out, grads=None):
    """Backprop through a layer sequence, accumulating into ``grads`` keyed by full name."""
    grads = {} if grads is None else grads
    g = grad_out
    for i in range(len(specs) - 1, -1, -1):
        view = store.view(f"{prefix}{i}")
        g, gp = layer_backward(specs[i], view, caches[i], g)
        for name, val in gp.items():
            key = view.key(name)
            grads[key] = grads[key] + val if key in grads else val
    return g, grads


# --------------------------------------------------------------------------
# optimization


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    lr_decay: float = 0.5
    lr_decay_every: int = 20

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


def adam_step(store: ParamStore, grads: dict, config: TrainConfig, lr: float | None = None) -> ParamStore:
    """Bias-corrected Adam update of every parameter in place; returns the store."""
    lr = config.learning_rate if lr is None else lr
    store.step += 1
    t = store.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise RuntimeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = store.m[name] = b1 * store.m[name] + (1 - b1) * g
        v = store.v[name] = b2 * store.v[name] + (1 - b2) * g * g
        if lr != 0:
            store.params[name] = (p - lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon_adam)).astype(p.dtype)
    return store
