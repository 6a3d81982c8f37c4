"""Synthetic images and the [0, 1] <-> [-1, 1] pixel convention."""

import numpy as np


def to_signed(x):
    """[0, 1] image values to the networks' [-1, 1] range."""
    return 2.0 * np.asarray(x, dtype=np.float64) - 1.0


def to_unit(x):
    """[-1, 1] values back to [0, 1], clipped."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def synthetic_images(n, size, seed=0, channels=3):
    """Smooth colored blobs over a gradient background, (n, size, size, channels) in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((n, size, size, channels))
    for i in range(n):
        img = np.empty((size, size, channels))
        g = rng.uniform(-1, 1, size=2)
        for c in range(channels):
            img[:, :, c] = rng.uniform(0.2, 0.6) + 0.2 * (g[0] * xx + g[1] * yy)
        for _ in range(rng.integers(3, 7)):
            cy, cx = rng.uniform(0, 1, size=2)
            s = rng.uniform(0.05, 0.2)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
            img += blob[:, :, None] * rng.uniform(-0.5, 0.5, size=channels)
        for _ in range(rng.integers(1, 3)):
            y0, x0 = rng.integers(0, size - size // 4, size=2)
            h, w = rng.integers(size // 8, size // 3, size=2)
            img[y0 : y0 + h, x0 : x0 + w] += rng.uniform(-0.3, 0.3, size=channels)
        out[i] = np.clip(img, 0.0, 1.0)
    return out
