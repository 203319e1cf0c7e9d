"""PSNR and SSIM on [0, 1] images, plus a small per-image report."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, correlate_valid

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def to_luminance(img) -> np.ndarray:
    """Reduce an image to a 2-D H x W luminance plane.

    Accepts H x W, C x H x W or 1 x C x H x W with C in {1, 3}.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ShapeError("ssim works on one image at a time")
        img = img[0]
    if img.ndim == 3:
        if img.shape[0] == 3:
            return np.tensordot(LUMA, img, axes=1)
        if img.shape[0] == 1:
            return img[0]
        raise ShapeError(f"expected 1 or 3 channels, got {img.shape[0]}")
    if img.ndim != 2:
        raise ShapeError(f"cannot interpret shape {img.shape} as an image")
    return img


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    x = img[None, None]
    x = correlate_valid(x, g[None, None, :, None])
    x = correlate_valid(x, g[None, None, None, :])
    return x[0, 0]


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid 11 x 11 Gaussian windows (sigma 1.5), on luminance."""
    a = to_luminance(a)
    b = to_luminance(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    names: list = field(default_factory=list)
    psnrs: list = field(default_factory=list)
    ssims: list = field(default_factory=list)

    def add(self, name, clean, restored):
        self.names.append(name)
        self.psnrs.append(psnr(restored, clean))
        self.ssims.append(ssim(restored, clean) if min(np.shape(clean)[-2:]) >= SSIM_WINDOW else float("nan"))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnrs)) if self.psnrs else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssims)) if self.ssims else float("nan")

    def to_table(self) -> str:
        width = max([len("image"), len("mean")] + [len(n) for n in self.names])
        lines = [f"{'image':<{width}}  {'psnr_db':>9}  {'ssim':>7}"]
        for n, p, s in zip(self.names, self.psnrs, self.ssims):
            lines.append(f"{n:<{width}}  {p:9.3f}  {s:7.4f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:9.3f}  {self.mean_ssim:7.4f}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "psnr_db", "ssim"])
            for n, p, s in zip(self.names, self.psnrs, self.ssims):
                w.writerow([n, repr(p), repr(s)])
            w.writerow(["mean", repr(self.mean_psnr), repr(self.mean_ssim)])
