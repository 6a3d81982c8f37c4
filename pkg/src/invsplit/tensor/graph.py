"""Declarative layer graphs with reverse-mode differentiation.

A :class:`Graph` is an ordered list of :class:`LayerSpec` entries. Each layer
reads the previous layer's output (or a named ``source``) and writes an output
under its own name, so skip connections are expressed by naming an earlier
output as ``concat_source``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import ops

KINDS = {
    "conv": {"kernel", "stride", "use_bias"},
    "conv_transpose": {"kernel", "stride", "use_bias"},
    "batch_norm": set(),
    "leaky_relu": {"alpha"},
    "relu": set(),
    "tanh": set(),
    "sigmoid": set(),
    "concat": {"concat_source"},
    "pixel_unshuffle": {"r"},
    "pixel_shuffle": {"r"},
    "dense": {"units", "use_bias"},
    "clamp": {"lo", "hi"},
}
_OPTIONAL = ("kernel", "stride", "alpha", "r", "concat_source", "units", "use_bias", "lo", "hi")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAK = 0.2


class GraphError(ValueError):
    """Raised for shape or evaluation problems; carries the offending layer name."""

    def __init__(self, layer, message):
        super().__init__(f"[{layer}] {message}")
        self.layer = layer


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    kernel: Optional[tuple] = None
    stride: Optional[int] = None
    alpha: Optional[float] = None
    r: Optional[int] = None
    concat_source: Optional[str] = None
    units: Optional[int] = None
    use_bias: Optional[bool] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    source: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(self.name, f"unknown layer kind {self.kind!r}")
        required = KINDS[self.kind]
        for f in _OPTIONAL:
            present = getattr(self, f) is not None
            if f in required and not present:
                raise GraphError(self.name, f"{self.kind} requires field {f!r}")
            if f not in required and present:
                raise GraphError(self.name, f"{self.kind} does not take field {f!r}")
        if self.kernel is not None and len(self.kernel) != 4:
            raise GraphError(self.name, "kernel must be (kh, kw, cin, cout)")
        if self.stride is not None and self.stride < 1:
            raise GraphError(self.name, "stride must be a positive integer")
        if self.r is not None and self.r < 1:
            raise GraphError(self.name, "shuffle factor must be positive")

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name not in d and v is not None:
                d[f.name] = list(v) if isinstance(v, tuple) else v
        return d


def conv(name, kh, kw, cin, cout, stride=1, bias=True, source=None):
    return LayerSpec(name, "conv", kernel=(kh, kw, cin, cout), stride=stride, use_bias=bias, source=source)


def conv_transpose(name, kh, kw, cin, cout, stride=2, bias=True, source=None):
    return LayerSpec(name, "conv_transpose", kernel=(kh, kw, cin, cout), stride=stride,
                     use_bias=bias, source=source)


def truncated_normal(rng, shape, std):
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


@dataclass
class Trace:
    """Intermediates retained by a forward pass for the matching backward pass."""

    inputs: dict
    values: dict = field(default_factory=dict)
    caches: dict = field(default_factory=dict)
    mode: str = "train"


class Graph:
    """Compiled layer graph owning its parameters and batch-norm statistics.

    Args:
        layers: ordered layer specs.
        inputs: mapping of input name to (h, w, c); order is significant, the
            first input feeds the first layer unless it names a ``source``.
        seed: parameter initialization seed.
        init_std: standard deviation of the truncated-normal weight init.
    """

    def __init__(self, layers, inputs, seed=0, init_std=0.02, name="graph"):
        self.name = name
        self.layers = list(layers)
        self.input_shapes = {k: tuple(v) for k, v in dict(inputs).items()}
        self.mode = "train"
        self.trace = None
        self.shapes = self.compile()
        self.params = {}
        self.buffers = {}
        self.init_params(seed, init_std)

    # -- static shape checking -------------------------------------------
    def compile(self):
        """Return every named output's (h, w, c) without evaluating anything."""
        shapes = dict(self.input_shapes)
        prev = next(iter(self.input_shapes))
        for L in self.layers:
            if L.name in shapes:
                raise GraphError(L.name, "duplicate output name")
            src = L.source or prev
            if src not in shapes:
                raise GraphError(L.name, f"source {src!r} is not an earlier output")
            shapes[L.name] = self._out_shape(L, shapes[src], shapes)
            prev = L.name
        self.output_name = prev
        return shapes

    def _out_shape(self, L, shp, shapes):
        h, w, c = shp
        k = L.kind
        if k in ("conv", "conv_transpose"):
            kh, kw, cin, cout = L.kernel
            if c != cin:
                raise GraphError(L.name, f"expected {cin} input channels, got {c}")
            if k == "conv":
                return (-(-h // L.stride), -(-w // L.stride), cout)
            return (h * L.stride, w * L.stride, cout)
        if k == "concat":
            if L.concat_source not in shapes:
                raise GraphError(L.name, f"concat source {L.concat_source!r} is not an earlier output")
            oh, ow, oc = shapes[L.concat_source]
            if (oh, ow) != (h, w):
                raise GraphError(L.name, f"cannot concat {(h, w)} with {(oh, ow)}")
            return (h, w, c + oc)
        if k == "pixel_unshuffle":
            if h % L.r or w % L.r:
                raise GraphError(L.name, f"{h}x{w} not divisible by r={L.r}")
            return (h // L.r, w // L.r, c * L.r * L.r)
        if k == "pixel_shuffle":
            if c % (L.r * L.r):
                raise GraphError(L.name, f"{c} channels not divisible by r**2={L.r * L.r}")
            return (h * L.r, w * L.r, c // (L.r * L.r))
        if k == "dense":
            return (1, 1, L.units)
        return shp

    @property
    def output_shape(self):
        return self.shapes[self.output_name]

    def _source(self, i):
        L = self.layers[i]
        if L.source:
            return L.source
        return self.layers[i - 1].name if i else next(iter(self.input_shapes))

    def _in_shape(self, i):
        return self.shapes[self._source(i)]

    # -- parameters ---------------------------------------------------------
    def init_params(self, seed, init_std=0.02):
        rng = np.random.default_rng(seed)
        self.params.clear()
        self.buffers.clear()
        for i, L in enumerate(self.layers):
            if L.kind in ("conv", "conv_transpose"):
                self.params[L.name + ".w"] = truncated_normal(rng, L.kernel, init_std)
                if L.use_bias:
                    self.params[L.name + ".b"] = np.zeros(L.kernel[3])
            elif L.kind == "dense":
                n_in = int(np.prod(self._in_shape(i)))
                self.params[L.name + ".w"] = truncated_normal(rng, (n_in, L.units), init_std)
                if L.use_bias:
                    self.params[L.name + ".b"] = np.zeros(L.units)
            elif L.kind == "batch_norm":
                c = self._in_shape(i)[2]
                self.params[L.name + ".gamma"] = np.ones(c)
                self.params[L.name + ".beta"] = np.zeros(c)
                self.buffers[L.name + ".mean"] = np.zeros(c)
                self.buffers[L.name + ".var"] = np.ones(c)

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def summary(self):
        """Rows of (layer name, kind, output shape)."""
        return [(L.name, L.kind, self.shapes[L.name]) for L in self.layers]

    # -- evaluation ---------------------------------------------------------
    def _check_inputs(self, inputs):
        if not isinstance(inputs, dict):
            inputs = {next(iter(self.input_shapes)): inputs}
        out = {}
        n = None
        for key, shp in self.input_shapes.items():
            if key not in inputs:
                raise GraphError(key, "missing graph input")
            x = np.asarray(inputs[key], dtype=np.float64)
            if x.ndim != 4 or x.shape[1:] != shp:
                raise GraphError(key, f"expected input (n, {shp[0]}, {shp[1]}, {shp[2]}), got {x.shape}")
            if n is not None and x.shape[0] != n:
                raise GraphError(key, "inputs disagree on batch size")
            n = x.shape[0]
            out[key] = x
        return out

    def run(self, inputs, mode=None, update_stats=True):
        """Evaluate the graph; returns (output, trace)."""
        mode = mode or self.mode
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        tr = Trace(inputs=self._check_inputs(inputs), mode=mode)
        vals = tr.values
        vals.update(tr.inputs)
        for i, L in enumerate(self.layers):
            x = vals[self._source(i)]
            y, cache = self._layer_forward(L, x, vals, mode, update_stats)
            if not np.isfinite(y).all():
                raise GraphError(L.name, "non-finite activation")
            vals[L.name] = y
            tr.caches[L.name] = cache
        return vals[self.output_name], tr

    def forward(self, inputs, mode=None, update_stats=True):
        out, self.trace = self.run(inputs, mode, update_stats)
        return out

    def _layer_forward(self, L, x, vals, mode, update_stats):
        k, p = L.kind, self.params
        if k == "conv":
            y = ops.conv2d(x, p[L.name + ".w"], L.stride)
            if L.use_bias:
                y = y + p[L.name + ".b"]
            return y, None
        if k == "conv_transpose":
            y = ops.conv2d_transpose(x, p[L.name + ".w"], L.stride)
            if L.use_bias:
                y = y + p[L.name + ".b"]
            return y, None
        if k == "batch_norm":
            g, b = p[L.name + ".gamma"], p[L.name + ".beta"]
            if mode == "train":
                y, cache = ops.batch_norm_train(x, g, b, BN_EPS)
                if update_stats:
                    m, v = L.name + ".mean", L.name + ".var"
                    self.buffers[m] = BN_MOMENTUM * self.buffers[m] + (1 - BN_MOMENTUM) * cache[2]
                    self.buffers[v] = BN_MOMENTUM * self.buffers[v] + (1 - BN_MOMENTUM) * cache[3]
                return y, cache
            inv_std = 1.0 / np.sqrt(self.buffers[L.name + ".var"] + BN_EPS)
            y = g * (x - self.buffers[L.name + ".mean"]) * inv_std + b
            return y, inv_std
        if k == "leaky_relu":
            return np.where(x > 0, x, L.alpha * x), None
        if k == "relu":
            return np.maximum(x, 0.0), None
        if k == "tanh":
            y = np.tanh(x)
            return y, y
        if k == "sigmoid":
            y = ops.sigmoid(x)
            return y, y
        if k == "clamp":
            return np.clip(x, L.lo, L.hi), None
        if k == "concat":
            return np.concatenate([x, vals[L.concat_source]], axis=3), None
        if k == "pixel_unshuffle":
            return ops.pixel_unshuffle(x, L.r), None
        if k == "pixel_shuffle":
            return ops.pixel_shuffle(x, L.r), None
        if k == "dense":
            flat = x.reshape(x.shape[0], -1)
            y = flat @ p[L.name + ".w"]
            if L.use_bias:
                y = y + p[L.name + ".b"]
            return y.reshape(x.shape[0], 1, 1, L.units), None
        raise GraphError(L.name, f"no forward rule for {k}")

    def backward(self, out_grad, trace=None):
        """Reverse pass. Returns (param_grads, input_grads) as dicts."""
        tr = trace if trace is not None else self.trace
        if tr is None:
            raise RuntimeError(f"{self.name}: backward called without a retained forward trace")
        out = tr.values[self.output_name]
        out_grad = np.asarray(out_grad, dtype=np.float64)
        if out_grad.shape != out.shape:
            raise GraphError(self.output_name, f"gradient shape {out_grad.shape} != output {out.shape}")
        grads = {self.output_name: out_grad}
        pgrads = {k: np.zeros_like(v) for k, v in self.params.items()}

        def acc(name, g):
            if name in grads:
                grads[name] = grads[name] + g
            else:
                grads[name] = g

        for i in range(len(self.layers) - 1, -1, -1):
            L = self.layers[i]
            g = grads.pop(L.name, None)
            if g is None:
                continue
            src = self._source(i)
            x = tr.values[src]
            dx = self._layer_backward(L, x, tr.values[L.name], tr.caches[L.name], g, pgrads, tr, acc)
            acc(src, dx)
        in_grads = {k: grads.get(k, np.zeros_like(v)) for k, v in tr.inputs.items()}
        return pgrads, in_grads

    def _layer_backward(self, L, x, y, cache, g, pgrads, tr, acc):
        k, p = L.kind, self.params
        if k == "conv":
            w = p[L.name + ".w"]
            pgrads[L.name + ".w"] += ops.conv2d_weight_grad(x, g, w.shape, L.stride)
            if L.use_bias:
                pgrads[L.name + ".b"] += g.sum(axis=(0, 1, 2))
            return ops.conv2d_input_grad(g, w, L.stride, x.shape)
        if k == "conv_transpose":
            dx, dw = ops.conv2d_transpose_backward(x, p[L.name + ".w"], L.stride, g)
            pgrads[L.name + ".w"] += dw
            if L.use_bias:
                pgrads[L.name + ".b"] += g.sum(axis=(0, 1, 2))
            return dx
        if k == "batch_norm":
            gamma = p[L.name + ".gamma"]
            if tr.mode == "train":
                dx, dgamma, dbeta = ops.batch_norm_train_backward(g, gamma, cache)
            else:
                xhat = (x - self.buffers[L.name + ".mean"]) * cache
                dgamma, dbeta = (g * xhat).sum(axis=(0, 1, 2)), g.sum(axis=(0, 1, 2))
                dx = g * gamma * cache
            pgrads[L.name + ".gamma"] += dgamma
            pgrads[L.name + ".beta"] += dbeta
            return dx
        if k == "leaky_relu":
            return np.where(x > 0, g, L.alpha * g)
        if k == "relu":
            return np.where(x > 0, g, 0.0)
        if k == "tanh":
            return g * (1.0 - cache * cache)
        if k == "sigmoid":
            return g * cache * (1.0 - cache)
        if k == "clamp":
            return np.where((x > L.lo) & (x < L.hi), g, 0.0)
        if k == "concat":
            c = x.shape[3]
            acc(L.concat_source, g[..., c:])
            return g[..., :c]
        if k == "pixel_unshuffle":
            return ops.pixel_shuffle(g, L.r)
        if k == "pixel_shuffle":
            return ops.pixel_unshuffle(g, L.r)
        if k == "dense":
            flat = x.reshape(x.shape[0], -1)
            g2 = g.reshape(g.shape[0], -1)
            pgrads[L.name + ".w"] += flat.T @ g2
            if L.use_bias:
                pgrads[L.name + ".b"] += g2.sum(axis=0)
            return (g2 @ p[L.name + ".w"].T).reshape(x.shape)
        raise GraphError(L.name, f"no backward rule for {k}")

    # -- state ---------------------------------------------------------------
    def state(self):
        """Copy of all parameters and buffers, keyed by name."""
        s = {"param/" + k: v.copy() for k, v in self.params.items()}
        s.update({"buffer/" + k: v.copy() for k, v in self.buffers.items()})
        return s

    def load_state(self, state):
        for k in self.params:
            v = np.asarray(state["param/" + k], dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise GraphError(k, f"parameter shape {v.shape} != {self.params[k].shape}")
            self.params[k] = v.copy()
        for k in self.buffers:
            self.buffers[k] = np.asarray(state["buffer/" + k], dtype=np.float64).copy()


def graph_forward(g, inputs):
    return g.forward(inputs)


def graph_backward(g, output_grad):
    return g.backward(output_grad)
