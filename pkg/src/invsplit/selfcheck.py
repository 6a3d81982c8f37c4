"""Finite-difference and adjoint oracles bundled for the ``gradcheck`` command.

Each check returns a measured error and the limit it must stay under.
"""

from __future__ import annotations

import numpy as np

from .forward import (
    Composite,
    MotionBlurPeriodic,
    SpectralAverage,
    StridedConvDown,
    joint_operator,
    make_kernel,
)
from .networks import (
    DAEConfig,
    UNetConfig,
    build_comparator,
    build_dae,
    build_discriminator,
    build_unet,
    dae_inputs,
)
from .tensor import Graph, LayerSpec, gradient_check
from .tensor.gradcheck import finite_difference_error, weighted_sum
from .tensor.graph import conv, conv_transpose
from .training import LossWeights, discriminator_loss, generator_loss

GRAD_LIMIT = 1e-4
ADJOINT_LIMIT = 1e-8


def layer_cases():
    return {
        "conv": ([conv("l", 4, 4, 2, 3, stride=2)], (4, 4, 2)),
        "conv_stride1": ([conv("l", 4, 4, 2, 3, stride=1)], (4, 4, 2)),
        "conv_transpose": ([conv_transpose("l", 4, 4, 2, 3, stride=2)], (2, 2, 2)),
        "batch_norm": ([LayerSpec("l", "batch_norm")], (3, 3, 2)),
        "leaky_relu": ([LayerSpec("l", "leaky_relu", alpha=0.2)], (3, 3, 2)),
        "relu": ([LayerSpec("l", "relu")], (3, 3, 2)),
        "tanh": ([LayerSpec("l", "tanh")], (3, 3, 2)),
        "sigmoid": ([LayerSpec("l", "sigmoid")], (3, 3, 2)),
        "concat": ([LayerSpec("a", "tanh"), LayerSpec("l", "concat", concat_source="x")], (3, 3, 2)),
        "pixel_unshuffle": ([LayerSpec("l", "pixel_unshuffle", r=2)], (4, 4, 2)),
        "pixel_shuffle": ([LayerSpec("l", "pixel_shuffle", r=2)], (2, 2, 8)),
        "dense": ([LayerSpec("l", "dense", units=3, use_bias=True)], (2, 2, 2)),
        "clamp": ([LayerSpec("l", "clamp", lo=-0.5, hi=0.5)], (3, 3, 2)),
    }


def layer_gradient_errors(seed=0):
    out = {}
    for name, (layers, shape) in layer_cases().items():
        g = Graph(layers, {"x": shape}, seed=seed + 5, init_std=0.5)
        x = np.random.default_rng(seed + 7).normal(size=(2,) + shape)
        out[name] = gradient_check(g, x, loss=weighted_sum(seed + 2))
    return out


def network_gradient_errors(seed=0):
    rng = np.random.default_rng(seed)
    u = build_unet(UNetConfig(size=8, in_channels=2, out_channels=2, filters=(3, 4)), seed=seed + 1, init_std=0.5)
    dcfg = DAEConfig(size=4, channels=2, r=2, encoder=(3, 2), decoder=(3,), kernel=3, y_channels=1)
    d = build_dae(dcfg, seed=seed + 2, init_std=0.5)
    disc = build_discriminator(8, channels=2, seed=seed + 3, levels=2, init_std=0.3)
    return {
        "tiny_unet": gradient_check(u, rng.normal(size=(2, 8, 8, 2)), loss=weighted_sum(seed + 4)),
        "tiny_dae": gradient_check(d, {"z": rng.normal(size=(2, 4, 4, 2)), "y": rng.normal(size=(2, 2, 2, 1))},
                                   loss=weighted_sum(seed + 5)),
        "tiny_discriminator": gradient_check(disc, rng.normal(size=(3, 8, 8, 2)), loss=weighted_sum(seed + 6)),
    }


def composed_loss_errors(seed=0):
    """L_D over D's parameters, L_G(z) over the U-Net's, L_G(x_hat) over the DAE's."""
    S = 8
    rng = np.random.default_rng(seed + 11)
    ucfg = UNetConfig(size=S, filters=(3, 4))
    dcfg = DAEConfig(size=S, r=2, encoder=(4,), decoder=(4,), kernel=3)
    unet = build_unet(ucfg, seed + 1, init_std=0.2)
    dae = build_dae(dcfg, seed + 2, init_std=0.2)
    D = build_discriminator(S, 3, seed + 3, init_std=0.2)
    C = build_comparator(S, 3, seed + 4, widths=(3, 4))
    w = LossWeights(0.5, 0.5)
    x = np.tanh(rng.normal(size=(2, S, S, 3)))
    y = np.tanh(rng.normal(size=(2, S, S, 3)))
    ys = np.tanh(rng.normal(size=(2, S // 2, S // 2, 3)))

    out = {}
    z = unet.run(y, mode="train", update_stats=False)[0]
    xh = dae.run(dae_inputs(z, ys), mode="train", update_stats=False)[0]
    _, gd = discriminator_loss(D, x, z, xh)
    out["L_D"] = finite_difference_error(lambda: discriminator_loss(D, x, z, xh)[0], D.params, gd)

    z, tr = unet.run(y, mode="train", update_stats=False)
    gu, _ = unet.backward(generator_loss(z, x, D, C, w)[1], tr)
    out["L_G(z)"] = finite_difference_error(
        lambda: generator_loss(unet.run(y, mode="train", update_stats=False)[0], x, D, C, w)[0], unet.params, gu)

    xh, tr = dae.run(dae_inputs(z, ys), mode="train", update_stats=False)
    gx, _ = dae.backward(generator_loss(xh, x, D, C, w)[1], tr)
    out["L_G(x_hat)"] = finite_difference_error(
        lambda: generator_loss(dae.run(dae_inputs(z, ys), mode="train", update_stats=False)[0], x, D, C, w)[0],
        dae.params, gx)
    return out


def operator_variants(seed=0):
    k = make_kernel("linear_motion", 5, seed=seed, length=4)
    kc = make_kernel("linear_motion", 5, seed=seed, channels=3, length=4)
    return {
        "blur": MotionBlurPeriodic(k, (12, 12, 3)),
        "strided_d2": StridedConvDown(k, 2, (12, 12, 3)),
        "strided_d4": StridedConvDown(k, 4, (12, 12, 3)),
        "decimate_d2": StridedConvDown(None, 2, (12, 12, 3)),
        "spectral_average": SpectralAverage((12, 12, 3)),
        "joint": joint_operator(kc, (12, 12, 3), d=2),
        "composite_blur_down": Composite([MotionBlurPeriodic(k, (12, 12, 3)), StridedConvDown(None, 4, (12, 12, 3))]),
    }


def adjoint_errors(seed=0, pairs=100):
    """Worst relative mismatch of <Ax, y> and <x, A^T y> over random pairs."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, A in operator_variants(seed).items():
        worst = 0.0
        for _ in range(pairs):
            x = rng.normal(size=(1,) + A.in_shape)
            y = rng.normal(size=(1,) + A.out_shape)
            lhs = float(np.sum(A.forward(x) * y))
            rhs = float(np.sum(x * A.adjoint(y)))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
        out[name] = worst
    return out


def run_checks(seed=0):
    """[(name, measured, limit, passed)] for every oracle."""
    rows = []
    for group, errs, limit in (
        ("layer", layer_gradient_errors(seed), GRAD_LIMIT),
        ("network", network_gradient_errors(seed), GRAD_LIMIT),
        ("loss", composed_loss_errors(seed), GRAD_LIMIT),
        ("adjoint", adjoint_errors(seed), ADJOINT_LIMIT),
    ):
        for name, v in errs.items():
            rows.append((f"{group}/{name}", float(v), limit, bool(v < limit)))
    return rows
