"""Central finite-difference checks for analytic gradients."""

import numpy as np

MAX_CHECKED = 10_000


def half_sum_squares(out):
    return 0.5 * float(np.sum(out * out)), out


def weighted_sum(seed=0):
    """Loss sum(W * out) with fixed random W; its gradient is W."""
    cache = {}

    def loss(out):
        if out.shape not in cache:
            cache[out.shape] = np.random.default_rng(seed).normal(size=out.shape)
        w = cache[out.shape]
        return float(np.sum(w * out)), w

    return loss


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_difference_error(fn, tensors, analytic, step=1e-5):
    """Max relative error between ``analytic`` and central differences of ``fn``.

    ``tensors`` maps names to arrays that ``fn`` reads; they are perturbed in
    place one element at a time and restored afterwards.
    """
    total = sum(tensors[k].size for k in analytic)
    if total > MAX_CHECKED:
        raise ValueError(f"{total} elements exceeds the exhaustive-check cap of {MAX_CHECKED}")
    worst = 0.0
    for name, grad in analytic.items():
        arr = tensors[name]
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"{name} is not contiguous; cannot perturb in place")
        g = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = fn()
            flat[i] = old - step
            fm = fn()
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            worst = max(worst, relative_error(g[i], (fp - fm) / (2 * step)))
    return worst


def gradient_check(g, inputs, loss=half_sum_squares, step=1e-5, mode="train", check_inputs=True):
    """Max relative error of graph ``g``'s reverse pass over parameters and inputs.

    ``loss`` maps the graph output to (value, d value / d output).
    """
    if not isinstance(inputs, dict):
        inputs = {next(iter(g.input_shapes)): inputs}
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    out, tr = g.run(inputs, mode=mode, update_stats=False)
    val, dout = loss(out)
    if not np.isfinite(val):
        raise FloatingPointError("non-finite loss")
    pgrads, igrads = g.backward(dout, tr)

    tensors = {"param/" + k: v for k, v in g.params.items()}
    analytic = {"param/" + k: v for k, v in pgrads.items()}
    if check_inputs:
        tensors.update({"input/" + k: v for k, v in inputs.items()})
        analytic.update({"input/" + k: v for k, v in igrads.items()})

    def fn():
        o, _ = g.run(inputs, mode=mode, update_stats=False)
        return loss(o)[0]

    return finite_difference_error(fn, tensors, analytic, step)
