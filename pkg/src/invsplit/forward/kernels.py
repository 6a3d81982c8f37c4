"""Blur kernels: construction, validation and the plain-text kernel format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Kernel2D:
    """Convolution taps, either shared across channels (kh, kw) or per channel (kh, kw, c)."""

    taps: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim not in (2, 3):
            raise ValueError("kernel taps must be (kh, kw) or (kh, kw, c)")
        kh, kw = taps.shape[:2]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kh}x{kw}")
        if not np.isfinite(taps).all():
            raise ValueError("kernel taps must be finite")
        if self.normalized:
            sums = taps.sum(axis=(0, 1))
            if np.any(np.abs(sums - 1.0) > 1e-12):
                raise ValueError(f"normalized kernel sums to {sums}, not 1")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def size(self):
        return self.taps.shape[:2]

    @property
    def per_channel(self):
        return self.taps.ndim == 3

    @property
    def channels(self):
        return self.taps.shape[2] if self.per_channel else 1

    def channel_taps(self):
        """Taps as a (kh, kw, c) array (c = 1 for a shared kernel)."""
        return self.taps if self.per_channel else self.taps[:, :, None]

    @classmethod
    def delta(cls, size=1):
        t = np.zeros((size, size))
        t[size // 2, size // 2] = 1.0
        return cls(t)


def _normalize(t):
    return t / t.sum(axis=(0, 1))


def _gaussian(size, sigma):
    c = (size - 1) / 2.0
    ax = np.arange(size) - c
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def _line(size, length, angle_deg):
    """Bilinear rasterization of a centered line segment of the given length."""
    if length > size:
        raise ValueError(f"motion length {length} exceeds kernel size {size}")
    c = (size - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    n = 1 if length <= 1 else int(np.ceil(length)) * 8 + 1
    t = np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, n) if n > 1 else np.zeros(1)
    rows = c - t * np.sin(theta)
    cols = c + t * np.cos(theta)
    k = np.zeros((size, size))
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr, fc = rows - r0, cols - c0
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            w = wr * wc
            rr = np.clip(r0 + dr, 0, size - 1)
            cc = np.clip(c0 + dc, 0, size - 1)
            np.add.at(k, (rr, cc), w)
    return k / k.sum()


def make_kernel(kind, size, seed=0, channels=None, **params):
    """Build a normalized kernel.

    kind is ``flat``, ``linear_motion`` (params ``length``, optional ``angle``
    in degrees, drawn from ``seed`` when omitted) or ``gaussian`` (param
    ``sigma``). With ``channels`` set, a per-channel kernel is produced; motion
    angles are drawn independently per channel.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    rng = np.random.default_rng(seed)

    def one():
        if kind == "flat":
            return np.full((size, size), 1.0 / (size * size))
        if kind == "gaussian":
            sigma = params.get("sigma")
            if sigma is None or sigma <= 0:
                raise ValueError("gaussian kernel needs sigma > 0")
            return _gaussian(size, sigma)
        if kind == "linear_motion":
            length = params.get("length")
            if length is None or length < 1:
                raise ValueError("linear_motion kernel needs length >= 1")
            angle = params.get("angle")
            if angle is None:
                angle = rng.uniform(0.0, 180.0)
            return _line(size, length, angle)
        raise ValueError(f"unknown kernel kind {kind!r}")

    if channels is None:
        return Kernel2D(one())
    if kind == "linear_motion" and params.get("angle") is None:
        taps = np.stack([one() for _ in range(channels)], axis=2)
    else:
        base = one()
        taps = np.stack([base] * channels, axis=2)
    return Kernel2D(taps)


def save_kernel(kernel, path):
    """Write ``kernel kh kw channels normalized`` then kh rows per channel."""
    kh, kw = kernel.size
    t = kernel.channel_taps()
    lines = [f"kernel {kh} {kw} {kernel.channels if kernel.per_channel else 0} {int(kernel.normalized)}"]
    for ch in range(t.shape[2]):
        for row in t[:, :, ch]:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel(path):
    """Read a kernel file. A channel count of 0 marks a shared kernel."""
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 5 or head[0] != "kernel":
        raise ValueError(f"{path}: bad kernel header {text[0]!r}")
    kh, kw, ch, norm = (int(v) for v in head[1:])
    rows = [r for r in text[1:] if r.strip()]
    nch = max(ch, 1)
    if len(rows) != kh * nch:
        raise ValueError(f"{path}: expected {kh * nch} rows, found {len(rows)}")
    vals = np.array([[float(v) for v in r.split()] for r in rows])
    if vals.shape[1] != kw:
        raise ValueError(f"{path}: expected {kw} columns")
    taps = vals.reshape(nch, kh, kw).transpose(1, 2, 0)
    return Kernel2D(taps if ch else taps[:, :, 0], normalized=bool(norm))
