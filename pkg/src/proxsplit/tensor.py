"""Dense N x C x H x W array operations: reflect padding, 2-D convolution with
an exact adjoint, and Keys bicubic resampling.

Tensors are plain numpy arrays. Every function here is pure and returns a new
array; dtype is preserved (float64 for verification, float32 for training).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

BICUBIC_A = -0.5
DOWN_FACTORS = (2, 3, 4)
UP_FACTORS = (2, 3, 4)


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _as4d(x):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected an N x C x H x W tensor, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Kernel:
    """Convolution filter with taps of shape Cout x Cin x kh x kw.

    A 1 x 1 x kh x kw kernel acts on every image channel independently.
    """

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim == 2:
            taps = taps[None, None]
        if taps.ndim != 4:
            raise ShapeError(f"kernel taps must be 2-D or 4-D, got {taps.shape}")
        kh, kw = taps.shape[2:]
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
        object.__setattr__(self, "taps", taps)

    @property
    def origin(self) -> tuple[int, int]:
        return self.taps.shape[2] // 2, self.taps.shape[3] // 2

    @property
    def size(self) -> tuple[int, int]:
        return self.taps.shape[2], self.taps.shape[3]

    def is_delta(self) -> bool:
        t = self.taps
        if t.shape[0] != t.shape[1]:
            return False
        expected = np.zeros_like(t)
        oi, oj = self.origin
        for c in range(t.shape[0]):
            expected[c, c, oi, oj] = 1.0
        return bool(np.array_equal(t, expected))

    @classmethod
    def delta(cls, size: int = 1) -> "Kernel":
        taps = np.zeros((1, 1, size, size))
        taps[0, 0, size // 2, size // 2] = 1.0
        return cls(taps)


# --------------------------------------------------------------------------
# reflect padding


def reflect_index(n: int, before: int, after: int) -> np.ndarray:
    """Source index for every position of a reflect-padded axis of length n."""
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx > n - 1, period - idx, idx)


def _check_margins(x, margins):
    top, bottom, left, right = margins
    if min(margins) < 0:
        raise ValueError(f"margins must be non-negative, got {margins}")
    h, w = x.shape[-2:]
    if (top and top >= h) or (bottom and bottom >= h) or (left and left >= w) or (right and right >= w):
        raise ValueError(f"reflect margins {margins} too large for a {h}x{w} image")


def pad_reflect(x, margins):
    """Mirror-pad the last two axes by (top, bottom, left, right), edge not repeated."""
    x = np.asarray(x)
    margins = tuple(int(m) for m in margins)
    _check_margins(x, margins)
    top, bottom, left, right = margins
    if not any(margins):
        return x.copy()
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    return np.pad(x, width, mode="reflect")


def _fold_matrix(n, before, after, dtype):
    # (n + before + after) x n one-hot map from padded positions to sources
    idx = reflect_index(n, before, after)
    m = np.zeros((idx.size, n), dtype=dtype)
    m[np.arange(idx.size), idx] = 1
    return m


def pad_reflect_adjoint(g, margins):
    """Transpose of pad_reflect: scatter-add padded values back to their sources."""
    g = np.asarray(g)
    top, bottom, left, right = (int(m) for m in margins)
    h = g.shape[-2] - top - bottom
    w = g.shape[-1] - left - right
    if not (top or bottom or left or right):
        return g.copy()
    ph = _fold_matrix(h, top, bottom, g.dtype)
    pw = _fold_matrix(w, left, right, g.dtype)
    return np.matmul(np.matmul(ph.T, g), pw)


# --------------------------------------------------------------------------
# correlation / convolution


def im2col(x, kh: int, kw: int):
    """C*kh*kw x N*Ho*Wo column matrix of every valid kh x kw window of x."""
    n, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    xt = x.transpose(1, 0, 2, 3)
    for u in range(kh):
        for v in range(kw):
            cols[:, u, v] = xt[:, :, u:u + ho, v:v + wo]
    return cols.reshape(c * kh * kw, n * ho * wo)


def correlate_valid(x, w, return_cols: bool = False):
    """Valid cross-correlation: out[n,o,i,j] = sum_{c,u,v} w[o,c,u,v] x[n,c,i+u,j+v]."""
    n, _, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    cols = im2col(x, kh, kw)
    out = (w.reshape(o, -1) @ cols).reshape(o, n, ho, wo)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    return (out, cols) if return_cols else out


def _expand_depthwise(w, channels):
    if w.shape[0] == 1 and w.shape[1] == 1 and channels > 1:
        full = np.zeros((channels, channels) + w.shape[2:], dtype=w.dtype)
        full[np.arange(channels), np.arange(channels)] = w[0, 0]
        return full
    return w


def correlate2d(x, w, return_cols: bool = False):
    """Same-size cross-correlation with reflect padding (trained-filter orientation)."""
    x = _as4d(x)
    w = _expand_depthwise(np.asarray(w, dtype=x.dtype), x.shape[1])
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"kernel expects {w.shape[1]} input channels, tensor has {x.shape[1]}")
    ph, pw = w.shape[2] // 2, w.shape[3] // 2
    return correlate_valid(pad_reflect(x, (ph, ph, pw, pw)), w, return_cols)


def correlate2d_adjoint(g, w):
    """Exact transpose of correlate2d as a linear map of its input."""
    g = _as4d(g)
    w = np.asarray(w, dtype=g.dtype)
    w = _expand_depthwise(w, g.shape[1]) if w.shape[:2] == (1, 1) else w
    if w.shape[0] != g.shape[1]:
        raise ShapeError(f"kernel produces {w.shape[0]} channels, gradient has {g.shape[1]}")
    kh, kw = w.shape[2:]
    gz = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    ph, pw = kh // 2, kw // 2
    return pad_reflect_adjoint(correlate_valid(gz, wt), (ph, ph, pw, pw))


def _kernel_taps(k):
    return k.taps if isinstance(k, Kernel) else np.asarray(k)


def conv2d(x, k):
    """True (flipped-kernel) convolution k * x, same-size output, reflect boundary."""
    taps = _kernel_taps(k)
    return correlate2d(x, taps[:, :, ::-1, ::-1])


def conv2d_adjoint(g, k):
    """K^T g for K = conv2d(., k) including the reflect boundary."""
    taps = _kernel_taps(k)
    return correlate2d_adjoint(g, taps[:, :, ::-1, ::-1])


# --------------------------------------------------------------------------
# bicubic resampling


def cubic(x, a: float = BICUBIC_A):
    """Keys cubic convolution kernel."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """n_out x n_in bicubic interpolation matrix with pixel-center alignment.

    When shrinking with antialias the kernel is stretched by the inverse factor.
    Rows are normalized to sum to one; out-of-range taps fold back by reflection.
    """
    scale = n_out / n_in
    u = (np.arange(n_out) + 0.5) / scale - 0.5
    if scale < 1 and antialias:
        kern = lambda d: scale * cubic(scale * d)
        width = 4.0 / scale
    else:
        kern = cubic
        width = 4.0
    taps = int(np.ceil(width)) + 2
    left = np.floor(u - width / 2).astype(int)
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = kern(u[:, None] - idx)
    wts = wts / wts.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    period = 2 * (n_in - 1)
    folded = np.mod(idx, period)
    folded = np.where(folded > n_in - 1, period - folded, folded)
    rows = np.broadcast_to(np.arange(n_out)[:, None], idx.shape)
    np.add.at(m, (rows, folded), wts)
    return m


def resize(x, out_h: int, out_w: int):
    """Bicubic resize of the spatial axes to an explicit size."""
    x = _as4d(x)
    mh = resize_matrix(x.shape[2], out_h).astype(x.dtype)
    mw = resize_matrix(x.shape[3], out_w).astype(x.dtype)
    return np.matmul(np.matmul(mh, x), mw.T)


def _as_factor(factor):
    f = Fraction(factor).limit_denominator(16)
    if f.denominator != 1:
        raise ConfigError(f"unsupported resampling factor {factor}")
    return int(f)


def bicubic_resample(x, factor, direction: str = "down"):
    """Resize the spatial axes of x by an integer factor using Keys bicubic (a=-0.5).

    Downsampling applies the antialias prefilter implied by the stretched kernel.
    """
    x = _as4d(x)
    f = _as_factor(factor)
    h, w = x.shape[2:]
    if direction == "down":
        if f not in DOWN_FACTORS:
            raise ConfigError(f"downsampling factor must be one of {DOWN_FACTORS}, got {factor}")
        oh, ow = int(round(h / f)), int(round(w / f))
    elif direction == "up":
        if f not in UP_FACTORS:
            raise ConfigError(f"upsampling factor must be one of {UP_FACTORS}, got {factor}")
        oh, ow = h * f, w * f
    else:
        raise ConfigError(f"direction must be 'up' or 'down', got {direction!r}")
    return resize(x, oh, ow)


class Operator:
    """A linear map K on image tensors together with its exact transpose."""

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, g):
        raise NotImplementedError


class IdentityOperator(Operator):
    def apply(self, x):
        return np.array(x, copy=True)

    def adjoint(self, g):
        return np.array(g, copy=True)

    def __repr__(self):
        return "IdentityOperator()"


class ConvOperator(Operator):
    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self._identity = kernel.is_delta() and kernel.taps.shape[:2] == (1, 1)

    def apply(self, x):
        return np.array(x, copy=True) if self._identity else conv2d(x, self.kernel)

    def adjoint(self, g):
        return np.array(g, copy=True) if self._identity else conv2d_adjoint(g, self.kernel)

    def __repr__(self):
        return f"ConvOperator(size={self.kernel.size})"


class DownsampleOperator(Operator):
    """Bicubic antialiased decimation by an integer factor; adjoint is its transpose."""

    def __init__(self, factor: int):
        self.factor = _as_factor(factor)
        if self.factor not in DOWN_FACTORS:
            raise ConfigError(f"downsampling factor must be one of {DOWN_FACTORS}")
        self._cache = {}

    def _mats(self, h, w, dtype):
        key = (h, w, np.dtype(dtype).str)
        if key not in self._cache:
            mh = resize_matrix(h, int(round(h / self.factor))).astype(dtype)
            mw = resize_matrix(w, int(round(w / self.factor))).astype(dtype)
            self._cache[key] = (mh, mw)
        return self._cache[key]

    def apply(self, x):
        x = _as4d(x)
        mh, mw = self._mats(x.shape[2], x.shape[3], x.dtype)
        return np.matmul(np.matmul(mh, x), mw.T)

    def adjoint(self, g):
        g = _as4d(g)
        h, w = g.shape[2] * self.factor, g.shape[3] * self.factor
        mh, mw = self._mats(h, w, g.dtype)
        return np.matmul(np.matmul(mh.T, g), mw)

    def __repr__(self):
        return f"DownsampleOperator(factor={self.factor})"


def as_operator(k) -> Operator:
    if isinstance(k, Operator):
        return k
    if isinstance(k, Kernel):
        return ConvOperator(k)
    return ConvOperator(Kernel(np.asarray(k)))


def build_target_pyramid(x_gt, levels: int) -> list:
    """Fine-to-coarse list of targets, level i downsampled by 2**i."""
    x_gt = _as4d(x_gt)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    div = 2 ** (levels - 1)
    h, w = x_gt.shape[2:]
    if h % div or w % div:
        raise ValueError(f"{h}x{w} image not divisible by {div} for a {levels}-level pyramid")
    return [x_gt] + [resize(x_gt, h >> i, w >> i) for i in range(1, levels)]
