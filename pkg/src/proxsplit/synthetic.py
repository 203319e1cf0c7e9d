"""Procedural piecewise-smooth grayscale images for demos and tests.

Each image is a smooth background gradient overlaid with random discs,
rectangles and stripe patches, so it has flat regions, edges and texture.
"""

import numpy as np


def make_image(size: int, seed: int, channels: int = 1) -> np.ndarray:
    """One C x size x size image with values in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    a, b, c = rng.uniform(-0.4, 0.4, 3)
    img = 0.5 + a * (xx - 0.5) + b * (yy - 0.5) + c * (xx - 0.5) * (yy - 0.5)
    for _ in range(rng.integers(4, 9)):
        kind = rng.integers(3)
        cx, cy = rng.uniform(0, 1, 2)
        val = rng.uniform(0.05, 0.95)
        if kind == 0:
            r = rng.uniform(0.05, 0.3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        elif kind == 1:
            w, h = rng.uniform(0.05, 0.4, 2)
            mask = (np.abs(xx - cx) < w / 2) & (np.abs(yy - cy) < h / 2)
        else:
            r = rng.uniform(0.1, 0.3)
            freq = rng.uniform(6, 16)
            ang = rng.uniform(0, np.pi)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
            stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy))
            img = np.where(mask, val * stripes + (1 - val) * (1 - stripes), img)
            continue
        shade = val + rng.uniform(-0.15, 0.15) * (xx - cx)
        img = np.where(mask, shade, img)
    img = np.clip(img, 0.0, 1.0)
    if channels == 3:
        tint = rng.uniform(0.7, 1.0, 3)
        return np.stack([np.clip(img * t, 0, 1) for t in tint])
    return img[None]


def make_images(count: int, size: int, seed: int, channels: int = 1) -> list:
    return [make_image(size, seed * 1000 + i, channels) for i in range(count)]


def random_patches(images, patch: int, per_image: int, seed: int) -> np.ndarray:
    """N x C x patch x patch crops at uniform random positions."""
    rng = np.random.default_rng(seed)
    out = []
    for img in images:
        h, w = img.shape[-2:]
        for _ in range(per_image):
            i = rng.integers(0, h - patch + 1)
            j = rng.integers(0, w - patch + 1)
            out.append(img[:, i:i + patch, j:j + patch])
    return np.stack(out)
