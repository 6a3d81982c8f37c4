"""Builders for the inversion U-Net, the pixel-shuffling denoiser, the
discriminator and the fixed comparator, plus the composed y -> z -> x_hat pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forward.resize import bicubic_resize
from .tensor.graph import Graph, LayerSpec, conv, conv_transpose

D_CLAMP = 1e-7


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class UNetConfig:
    """Encoder filter counts per level; the decoder mirrors them.

    The reference configuration is the 8-level, 256x256 network. Fewer levels
    than log2(size) give a shallower U-Net with a larger bottleneck.
    """

    size: int = 256
    in_channels: int = 3
    out_channels: int = 3
    filters: tuple = (16, 32, 64, 128, 128, 128, 128, 128)
    kernel: int = 4
    alpha: float = 0.2

    def __post_init__(self):
        self.filters = tuple(self.filters)
        if not _is_pow2(self.size):
            raise ValueError(f"U-Net input size must be a power of two, got {self.size}")
        if not 1 <= len(self.filters) <= int(math.log2(self.size)):
            raise ValueError(f"{len(self.filters)} levels do not fit a {self.size}x{self.size} input")

    @property
    def levels(self):
        return len(self.filters)


@dataclass
class DAEConfig:
    size: int = 256
    channels: int = 3
    r: int = 4
    encoder: tuple = (128, 64, 32)
    decoder: tuple = (64, 128)
    kernel: int = 4
    concat_y: bool = True
    y_channels: int = 3

    def __post_init__(self):
        self.encoder = tuple(self.encoder)
        self.decoder = tuple(self.decoder)
        if self.size % self.r:
            raise ValueError(f"DAE size {self.size} not divisible by r={self.r}")
        if not self.encoder:
            raise ValueError("DAE needs at least one encoder conv")

    @property
    def y_size(self):
        return self.size // self.r


def build_unet(cfg: UNetConfig, seed=0, init_std=0.02):
    k, f, L = cfg.kernel, cfg.filters, cfg.levels
    layers = [conv("e1", k, k, cfg.in_channels, f[0], stride=2)]
    for i in range(2, L + 1):
        layers += [
            LayerSpec(f"e{i}_act", "leaky_relu", alpha=cfg.alpha),
            conv(f"e{i}_conv", k, k, f[i - 2], f[i - 1], stride=2, bias=False),
            LayerSpec(f"e{i}", "batch_norm"),
        ]
    ch = f[-1]
    for j in range(1, L):
        skip = L - j
        layers += [
            LayerSpec(f"d{j}_act", "relu"),
            conv_transpose(f"d{j}_conv", k, k, ch, f[skip - 1], stride=2, bias=False),
            LayerSpec(f"d{j}_bn", "batch_norm"),
            LayerSpec(f"d{j}", "concat", concat_source=f"e{skip}"),
        ]
        ch = 2 * f[skip - 1]
    layers += [
        LayerSpec(f"d{L}_act", "relu"),
        conv_transpose(f"d{L}_conv", k, k, ch, cfg.out_channels, stride=2),
        LayerSpec(f"d{L}", "tanh"),
    ]
    return Graph(layers, {"data": (cfg.size, cfg.size, cfg.in_channels)}, seed=seed,
                 init_std=init_std, name="unet")


def build_dae(cfg: DAEConfig, seed=0, init_std=0.02):
    """Pixel-unshuffle, stride-1 conv stack with optional y concat, pixel-shuffle.

    Graph inputs are ``z`` (size, size, channels) and, when ``concat_y``, ``y``
    at the unshuffled scale (size / r, size / r, y_channels).
    """
    k, r = cfg.kernel, cfg.r
    ch = cfg.channels * r * r
    layers = [LayerSpec("unshuffle", "pixel_unshuffle", r=r)]
    n = 0

    def block(cin, cout):
        nonlocal n
        n += 1
        return [
            conv(f"conv{n}", k, k, cin, cout, bias=False),
            LayerSpec(f"bn{n}", "batch_norm"),
            LayerSpec(f"relu{n}", "relu"),
        ]

    for c in cfg.encoder:
        layers += block(ch, c)
        ch = c
    if cfg.concat_y:
        layers.append(LayerSpec("concat", "concat", concat_source="y"))
        ch += cfg.y_channels
    for c in cfg.decoder:
        layers += block(ch, c)
        ch = c
    layers += [
        conv("out", k, k, ch, cfg.channels * r * r),
        LayerSpec("shuffle", "pixel_shuffle", r=r),
    ]
    inputs = {"z": (cfg.size, cfg.size, cfg.channels)}
    if cfg.concat_y:
        inputs["y"] = (cfg.y_size, cfg.y_size, cfg.y_channels)
    return Graph(layers, inputs, seed=seed, init_std=init_std, name="dae")


def build_discriminator(size, channels=3, seed=0, levels=None, init_std=0.02):
    """Strided-conv binary classifier ending in dense + sigmoid, clamped away from 0 and 1."""
    if not _is_pow2(size) or size < 2:
        raise ValueError(f"discriminator input size must be a power of two >= 2, got {size}")
    if levels is None:
        levels = max(1, int(math.log2(size)) - 2)
    if not 1 <= levels <= int(math.log2(size)):
        raise ValueError(f"{levels} levels do not fit a {size}x{size} input")
    layers = []
    cin = channels
    for lv in range(levels):
        cout = min(16 * 2**lv, 128)
        if lv == 0:
            layers.append(conv("h0_conv", 4, 4, cin, cout, stride=2))
        else:
            layers += [conv(f"h{lv}_conv", 4, 4, cin, cout, stride=2, bias=False),
                       LayerSpec(f"h{lv}_bn", "batch_norm")]
        layers.append(LayerSpec(f"h{lv}", "leaky_relu", alpha=0.2))
        cin = cout
    layers += [
        LayerSpec("logit", "dense", units=1, use_bias=True),
        LayerSpec("prob", "sigmoid"),
        LayerSpec("out", "clamp", lo=D_CLAMP, hi=1.0 - D_CLAMP),
    ]
    return Graph(layers, {"image": (size, size, channels)}, seed=seed, init_std=init_std,
                 name="discriminator")


def discriminate(D, x, mode="train", update_stats=True):
    """D(x) as an (n, 1) array of probabilities."""
    out = D.forward(x, mode=mode, update_stats=update_stats)
    return out.reshape(out.shape[0], 1)


@dataclass
class Comparator:
    """Fixed feature extractor C; never trained.

    ``provenance`` is ``random_fixed:<seed>`` or ``external:<path>``.
    """

    graph: Graph
    provenance: str = "random_fixed:0"
    feature_dim: int = field(init=False)

    def __post_init__(self):
        self.graph.mode = "infer"
        self.feature_dim = int(np.prod(self.graph.output_shape))

    def run(self, x):
        out, tr = self.graph.run(x, mode="infer", update_stats=False)
        return out.reshape(out.shape[0], -1), tr

    def features(self, x):
        return self.run(x)[0]

    def input_grad(self, trace, feat_grad):
        out = trace.values[self.graph.output_name]
        _, ig = self.graph.backward(np.asarray(feat_grad).reshape(out.shape), trace)
        return ig[next(iter(self.graph.input_shapes))]


def comparator_layers(channels, widths=(8, 16)):
    layers, cin = [], channels
    for i, c in enumerate(widths):
        layers += [conv(f"c{i}", 4, 4, cin, c, stride=2), LayerSpec(f"c{i}_act", "relu")]
        cin = c
    return layers


def build_comparator(size, channels=3, seed=0, widths=(8, 16)):
    """Random-weight conv features (He-scaled), fixed by ``seed``."""
    g = Graph(comparator_layers(channels, widths), {"image": (size, size, channels)}, seed=seed,
              init_std=1.0, name="comparator")
    rng = np.random.default_rng(seed)
    for k, v in g.params.items():
        if k.endswith(".w"):
            fan_in = v.shape[0] * v.shape[1] * v.shape[2]
            g.params[k] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=v.shape)
    return Comparator(g, provenance=f"random_fixed:{seed}")


def comparator_features(c: Comparator, x):
    return c.features(x)


def prepare_inputs(y, unet_cfg: UNetConfig, dae_cfg: DAEConfig, preprocess="auto"):
    """Map a measurement y to (U-Net input, DAE side input).

    ``preprocess`` is ``none``, ``bicubic`` or ``auto`` (bicubic only when the
    spatial size differs from the U-Net input).
    """
    y = np.asarray(y, dtype=np.float64)
    _, h, w, _ = y.shape
    s = unet_cfg.size
    if preprocess == "bicubic" or (preprocess == "auto" and (h, w) != (s, s)):
        yu = bicubic_resize(y, s, s)
    elif preprocess in ("none", "auto"):
        yu = y
    else:
        raise ValueError(f"unknown preprocess {preprocess!r}")
    ys = None
    if dae_cfg.concat_y:
        ys = bicubic_resize(y, dae_cfg.y_size, dae_cfg.y_size)
    return yu, ys


def dae_inputs(z, ys):
    return {"z": z} if ys is None else {"z": z, "y": ys}


def inversenet_forward(unet, dae, y, unet_cfg, dae_cfg, preprocess="auto", mode="infer"):
    """Returns (z, x_hat) for measurement y."""
    yu, ys = prepare_inputs(y, unet_cfg, dae_cfg, preprocess)
    z = unet.forward(yu, mode=mode, update_stats=False)
    x_hat = dae.forward(dae_inputs(z, ys), mode=mode, update_stats=False)
    return z, x_hat


def reference_unet_shapes():
    """Layer output shapes of the reference U-Net, keyed by table row name."""
    g = build_unet(UNetConfig())
    rows = ["data"] + [f"e{i}" for i in range(1, 9)] + [f"d{i}" for i in range(1, 9)]
    return {name: g.shapes[name] for name in rows}
