"""PSNR and SSIM on images with values in [0, 1]."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0


@dataclass(frozen=True)
class SSIMConfig:
    win_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0 or self.data_range <= 0:
            raise ValueError("SSIM constants must be positive")
        if self.win_size < 1 or self.win_size % 2 == 0:
            raise ValueError("window size must be odd")

    def window_1d(self):
        ax = np.arange(self.win_size) - (self.win_size - 1) / 2.0
        g = np.exp(-(ax**2) / (2 * self.sigma**2))
        return g / g.sum()


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE); identical inputs return PSNR_CAP."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / mse))


def psnr_report(a, b, peak=1.0):
    """Returns (psnr in dB, exact-match flag)."""
    a, b = _pair(a, b)
    return psnr(a, b, peak), bool(np.array_equal(a, b))


def _as_nhwc(x):
    if x.ndim == 2:
        return x[None, :, :, None]
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise ValueError(f"expected 2-4 dimensional image, got shape {x.shape}")


def _filter_valid(x, g):
    # separable 'valid' filtering over axes 1 and 2 of an (n, h, w, c) array
    k = g.size
    x = sliding_window_view(x, k, axis=1) @ g
    x = np.moveaxis(x, 2, -1)
    x = sliding_window_view(x, k, axis=-1) @ g
    return np.moveaxis(x, -1, 2)


def ssim_map(a, b, cfg=None):
    cfg = cfg or SSIMConfig()
    a, b = _pair(a, b)
    a, b = _as_nhwc(a), _as_nhwc(b)
    if a.shape[1] < cfg.win_size or a.shape[2] < cfg.win_size:
        raise ValueError(f"image {a.shape[1]}x{a.shape[2]} smaller than {cfg.win_size}x{cfg.win_size} window")
    g = cfg.window_1d()
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, cfg=None):
    """Mean SSIM over valid window positions, channels and batch."""
    return float(np.mean(ssim_map(a, b, cfg)))
