"""Linear degradation operators y = A x with exact adjoints.

Operators are bound to an input shape (h, w, c) and accept any batch size.
Blurs use periodic boundaries, so a blur is BCCB and diagonalized by the 2-D DFT.
"""

from __future__ import annotations

import numpy as np

from .kernels import Kernel2D

DENSE_CAP = 4096


def _check(x, shape, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != tuple(shape):
        raise ValueError(f"{what}: expected (n, {shape[0]}, {shape[1]}, {shape[2]}), got {x.shape}")
    return x


def bccb_transfer_function(kernel, h, w):
    """Eigenvalues of periodic convolution by ``kernel`` on an h x w grid.

    Returns a complex (h, w, c) array, c = 1 for shared kernels. The kernel
    center is placed at index (0, 0).
    """
    kh, kw = kernel.size
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than image {h}x{w}")
    t = kernel.channel_taps()
    emb = np.zeros((h, w, t.shape[2]))
    emb[:kh, :kw] = t
    emb = np.roll(emb, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(emb, axes=(0, 1))


def periodic_convolve(x, kernel, adjoint=False):
    """Direct spatial periodic convolution (or correlation when ``adjoint``)."""
    t = kernel.channel_taps()
    kh, kw = kernel.size
    ch, cw = kh // 2, kw // 2
    out = np.zeros_like(x)
    sign = -1 if adjoint else 1
    for a in range(kh):
        for b in range(kw):
            # y[i, j] += k[a, b] * x[i - (a - ch), j - (b - cw)]
            out += t[a, b] * np.roll(x, (sign * (a - ch), sign * (b - cw)), axis=(1, 2))
    return out


class DegradationOperator:
    """Base class; subclasses set in_shape/out_shape and implement _forward/_adjoint."""

    is_bccb = False
    in_shape: tuple
    out_shape: tuple

    def forward(self, x):
        return self._forward(_check(x, self.in_shape, type(self).__name__))

    def adjoint(self, y):
        return self._adjoint(_check(y, self.out_shape, type(self).__name__ + " adjoint"))

    def gram(self, x):
        """A^T A x."""
        return self.adjoint(self.forward(x))

    def __call__(self, x):
        return self.forward(x)


class Identity(DegradationOperator):
    is_bccb = True

    def __init__(self, in_shape):
        self.in_shape = self.out_shape = tuple(in_shape)

    def transfer(self):
        h, w, _ = self.in_shape
        return np.ones((h, w, 1), dtype=complex)

    def _forward(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()


class MotionBlurPeriodic(DegradationOperator):
    """Periodic 2-D convolution with a shared or per-channel kernel."""

    is_bccb = True

    def __init__(self, kernel: Kernel2D, in_shape):
        h, w, c = in_shape
        if kernel.per_channel and kernel.channels != c:
            raise ValueError(f"per-channel kernel has {kernel.channels} channels, image has {c}")
        self.kernel = kernel
        self.in_shape = self.out_shape = (h, w, c)
        kh, kw = kernel.size
        self._lam = bccb_transfer_function(kernel, h, w) if kh <= h and kw <= w else None

    def transfer(self):
        if self._lam is None:
            raise ValueError("kernel larger than image; no FFT transfer function")
        return self._lam

    def _forward(self, x):
        if self._lam is None:
            return periodic_convolve(x, self.kernel)
        return np.fft.ifft2(self._lam * np.fft.fft2(x, axes=(1, 2)), axes=(1, 2)).real

    def _adjoint(self, y):
        if self._lam is None:
            return periodic_convolve(y, self.kernel, adjoint=True)
        return np.fft.ifft2(np.conj(self._lam) * np.fft.fft2(y, axes=(1, 2)), axes=(1, 2)).real


class StridedConvDown(DegradationOperator):
    """Periodic blur followed by keeping one pixel every ``d`` in each direction.

    ``kernel=None`` gives pure decimation.
    """

    def __init__(self, kernel, d, in_shape):
        h, w, c = in_shape
        if d < 1 or h % d or w % d:
            raise ValueError(f"image {h}x{w} not divisible by stride {d}")
        self.d = d
        self.kernel = kernel
        self.blur = MotionBlurPeriodic(kernel, in_shape) if kernel is not None else None
        self.in_shape = (h, w, c)
        self.out_shape = (h // d, w // d, c)

    def _forward(self, x):
        if self.blur is not None:
            x = self.blur._forward(x)
        return x[:, :: self.d, :: self.d].copy()

    def _adjoint(self, y):
        n = y.shape[0]
        up = np.zeros((n,) + self.in_shape)
        up[:, :: self.d, :: self.d] = y
        return self.blur._adjoint(up) if self.blur is not None else up


class SpectralAverage(DegradationOperator):
    """Mean over channels, e.g. RGB to grayscale."""

    def __init__(self, in_shape):
        h, w, c = in_shape
        self.in_shape = (h, w, c)
        self.out_shape = (h, w, 1)

    def _forward(self, x):
        return x.mean(axis=3, keepdims=True)

    def _adjoint(self, y):
        c = self.in_shape[2]
        return np.repeat(y / c, c, axis=3)


class Composite(DegradationOperator):
    """Apply operators in order; the adjoint runs their adjoints in reverse."""

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise ValueError("composite needs at least one operator")
        for a, b in zip(ops, ops[1:]):
            if tuple(a.out_shape) != tuple(b.in_shape):
                raise ValueError(f"cannot chain {type(a).__name__} {a.out_shape} into "
                                 f"{type(b).__name__} {b.in_shape}")
        self.ops = ops
        self.in_shape = ops[0].in_shape
        self.out_shape = ops[-1].out_shape

    def _forward(self, x):
        for op in self.ops:
            x = op._forward(x)
        return x

    def _adjoint(self, y):
        for op in reversed(self.ops):
            y = op._adjoint(y)
        return y


def apply_forward(A, x):
    return A.forward(x)


def apply_adjoint(A, y):
    return A.adjoint(y)


def materialize_dense(A):
    """Dense (m, n) matrix of A acting on row-major vectorized (h, w, c) images."""
    n = int(np.prod(A.in_shape))
    if n > DENSE_CAP:
        raise ValueError(f"input dimension {n} exceeds dense cap {DENSE_CAP}")
    basis = np.eye(n).reshape((n,) + tuple(A.in_shape))
    cols = A.forward(basis).reshape(n, -1)
    return cols.T.copy()


def joint_operator(kernel, in_shape, d=2):
    """Per-channel blur, channel average, then decimation by ``d``."""
    blur = MotionBlurPeriodic(kernel, in_shape)
    avg = SpectralAverage(blur.out_shape)
    down = StridedConvDown(None, d, avg.out_shape)
    return Composite([blur, avg, down])
