"""Forward model y = k * x + noise for denoising and super-resolution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConfigError,
    DownsampleOperator,
    Kernel,
    Operator,
    as_operator,
    bicubic_resample,
    cubic,
)

KINDS = ("denoise", "superres")


def gaussian_noise(shape, seed: int, dtype=np.float64) -> np.ndarray:
    """Standard normal samples by the Box-Muller transform over PCG64 uniforms."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    rng = np.random.Generator(np.random.PCG64(seed))
    u1 = rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 lies in (0, 1]
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape).astype(dtype, copy=False)


def add_gaussian_noise(x, sigma, seed: int):
    """Return x + sigma * N(0, 1), not clipped.

    sigma may be a scalar or one value per batch element.
    """
    x = np.asarray(x)
    sig = np.asarray(sigma, dtype=np.float64)
    if np.any(sig < 0):
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sig.ndim == 0 and sig == 0:
        return x.copy()
    if sig.ndim == 1:
        sig = sig.reshape((-1,) + (1,) * (x.ndim - 1))
    eps = gaussian_noise(x.shape, seed, np.float64)
    return (x + sig * eps).astype(x.dtype, copy=False)


def make_kernel(kind: str, sigma_b: float = 1.0, size: int = 5, scale: int = 2) -> Kernel:
    """Build a 2-D kernel: ``delta``, ``gaussian`` (sigma_b, odd size) or ``bicubic_lowpass`` (scale)."""
    if kind == "delta":
        return Kernel.delta()
    if kind == "gaussian":
        if size < 1 or size % 2 == 0:
            raise ValueError(f"gaussian kernel size must be odd, got {size}")
        r = np.arange(size) - size // 2
        g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma_b**2))
        return Kernel(g / g.sum())
    if kind == "bicubic_lowpass":
        # stretched Keys kernel sampled at integer offsets; support is |d| < 2 * scale
        half = 2 * int(scale) - 1
        d = np.arange(-half, half + 1)
        taps = cubic(d / scale) / scale
        taps = taps / taps.sum()
        return Kernel(np.outer(taps, taps))
    raise ConfigError(f"unknown kernel kind {kind!r}")


@dataclass
class DegradationSpec:
    kind: str = "denoise"
    sigma: float = 0.0
    scale: int = 1
    seed: int = 0
    kernel: Kernel = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.scale = int(self.scale)
        if self.kernel is None:
            self.kernel = make_kernel("delta") if self.kind == "denoise" else make_kernel(
                "bicubic_lowpass", scale=self.scale)
        if self.kind == "denoise":
            if self.scale != 1:
                raise ConfigError("denoising requires scale = 1")
            if not self.kernel.is_delta():
                raise ConfigError("denoising requires a delta kernel")
        else:
            if self.scale not in (2, 3, 4):
                raise ConfigError(f"super-resolution scale must be 2, 3 or 4, got {self.scale}")
            if self.sigma != 0:
                raise ConfigError("super-resolution measurements carry no noise")

    def operator(self) -> Operator:
        """The linear map K the solver uses for this degradation."""
        if self.kind == "superres":
            return DownsampleOperator(self.scale)
        return as_operator(self.kernel)

    def to_text(self) -> str:
        return "\n".join([
            f"kind = {self.kind}",
            f"sigma = {self.sigma!r}",
            f"scale = {self.scale}",
            f"seed = {self.seed}",
        ]) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "DegradationSpec":
        known = {"kind", "sigma", "scale", "seed"}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown degradation keys: {sorted(unknown)}")
        return cls(kind=values.get("kind", "denoise"), sigma=float(values.get("sigma", 0.0)),
                   scale=int(values.get("scale", 1)), seed=int(values.get("seed", 0)))


def apply_forward_model(x, spec: DegradationSpec):
    """Synthesize the corrupted measurement y for a clean batch x."""
    x = np.asarray(x)
    if spec.kind == "denoise":
        return add_gaussian_noise(x, spec.sigma, spec.seed)
    h, w = x.shape[-2:]
    if h % spec.scale or w % spec.scale:
        raise ValueError(f"{h}x{w} image not divisible by scale {spec.scale}")
    return bicubic_resample(x, spec.scale, "down")


def initial_estimate(y, spec: DegradationSpec):
    """x0 fed to the solver: y for denoising, its bicubic upsampling for SR."""
    if spec.kind == "superres":
        return bicubic_resample(y, spec.scale, "up")
    return np.array(y, copy=True)
