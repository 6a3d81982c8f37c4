"""Degradation operators (blur, strided downsampling, spectral averaging) and resizing."""

from .kernels import Kernel2D, load_kernel, make_kernel, save_kernel
from .operators import (
    Composite,
    DegradationOperator,
    Identity,
    MotionBlurPeriodic,
    SpectralAverage,
    StridedConvDown,
    apply_adjoint,
    apply_forward,
    bccb_transfer_function,
    joint_operator,
    materialize_dense,
    periodic_convolve,
)
from .resize import bicubic_resize

__all__ = [
    "Kernel2D",
    "make_kernel",
    "save_kernel",
    "load_kernel",
    "DegradationOperator",
    "Identity",
    "MotionBlurPeriodic",
    "StridedConvDown",
    "SpectralAverage",
    "Composite",
    "joint_operator",
    "apply_forward",
    "apply_adjoint",
    "bccb_transfer_function",
    "materialize_dense",
    "periodic_convolve",
    "bicubic_resize",
]
