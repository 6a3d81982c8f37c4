"""Soft-label adversarial losses, Adam with global-norm clipping, and the
joint training loop: K discriminator updates, then the U-Net, then the DAE.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import psnr
from .networks import dae_inputs, prepare_inputs

log = logging.getLogger(__name__)

REAL_LABEL = 0.99
FAKE_LABEL = 0.01
TRACE_COLUMNS = ["iter", "L_D", "L_G_z", "L_G_xhat", "psnr_z", "psnr_xhat", "var_x_minus_z"]


class NonFiniteLoss(FloatingPointError):
    def __init__(self, message, breakdown):
        super().__init__(f"{message}: {breakdown}")
        self.breakdown = breakdown


@dataclass
class LossWeights:
    """Reconstruction (lambda_r, a.k.a. lambda_l) and feature-matching weights."""

    lambda_r: float = 0.5
    lambda_f: float = 0.5

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_f < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    k_disc: int = 1
    batch_size: int = 36
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.k_disc < 1 or self.batch_size < 1:
            raise ValueError("k_disc and batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)


# -- losses -------------------------------------------------------------------

def soft_gan_loss(d_out, label):
    """Mean of -l log D - (1 - l) log(1 - D); returns (loss, d loss / d D)."""
    if not 0.0 <= label <= 1.0:
        raise ValueError(f"soft label {label} outside [0, 1]")
    d = np.asarray(d_out, dtype=np.float64)
    n = d.shape[0] if d.ndim else 1
    loss = float(np.sum(-label * np.log(d) - (1 - label) * np.log1p(-d))) / n
    grad = (-label / d + (1 - label) / (1 - d)) / n
    return loss, grad


def _d_term(D, img, label, update_stats):
    out, tr = D.run(img, mode="train", update_stats=update_stats)
    loss, g = soft_gan_loss(out, label)
    return loss, g, tr


def discriminator_loss(D, x, z, x_hat, update_stats=False):
    """L_D with labels 0.99 / 0.01 / 0.01; returns (loss, parameter grads)."""
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in D.params.items()}
    for img, label in ((x, REAL_LABEL), (z, FAKE_LABEL), (x_hat, FAKE_LABEL)):
        loss, g, tr = _d_term(D, img, label, update_stats)
        pg, _ = D.backward(g, tr)
        for k in grads:
            grads[k] += pg[k]
        total += loss
    return total, grads


def generator_loss(out, x, D, C, w: LossWeights, parts=False):
    """Non-saturating soft GAN term + lambda_r MSE + lambda_f feature MSE.

    Returns (loss, d loss / d out); with ``parts`` also a breakdown dict.
    """
    gan, g_d, tr_d = _d_term(D, out, REAL_LABEL, False)
    _, ig = D.backward(g_d, tr_d)
    grad = ig[next(iter(D.input_shapes))]

    diff = out - x
    rec = float(np.mean(diff * diff))
    grad = grad + w.lambda_r * 2.0 * diff / diff.size

    feat = 0.0
    if w.lambda_f:
        f_out, tr_c = C.run(out)
        f_x = C.features(x)
        fd = f_out - f_x
        feat = float(np.mean(fd * fd))
        grad = grad + C.input_grad(tr_c, w.lambda_f * 2.0 * fd / fd.size)

    loss = gan + w.lambda_r * rec + w.lambda_f * feat
    if parts:
        return loss, grad, {"gan": gan, "recon": rec, "feature": feat}
    return loss, grad


# -- optimizer ------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam; updates ``params`` and ``state`` in place."""
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {k}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, g in grads.items():
        m = state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        params[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads, max_norm=5.0):
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


# -- training ---------------------------------------------------------------

@dataclass
class TrainingState:
    unet: object
    dae: object
    disc: object
    comparator: object
    unet_cfg: object
    dae_cfg: object
    config: TrainConfig
    seed: int = 0
    iteration: int = 0
    adam: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("unet", "dae", "disc"):
            if name not in self.adam:
                self.adam[name] = AdamState.for_params(getattr(self, name).params)

    def networks(self):
        return {"unet": self.unet, "dae": self.dae, "disc": self.disc}

    def tensors(self):
        """Flat name -> array mapping of everything that evolves during training."""
        out = {}
        for name, g in self.networks().items():
            for k, v in g.state().items():
                out[f"{name}/{k}"] = v
            st = self.adam[name]
            for k in g.params:
                out[f"adam/{name}/m/{k}"] = st.m[k].copy()
                out[f"adam/{name}/v/{k}"] = st.v[k].copy()
            out[f"adam/{name}/step"] = np.array(float(st.step))
        return out

    def load_tensors(self, tensors):
        for name, g in self.networks().items():
            prefix = name + "/"
            g.load_state({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
            st = self.adam[name]
            for k in g.params:
                st.m[k] = np.array(tensors[f"adam/{name}/m/{k}"], dtype=np.float64)
                st.v[k] = np.array(tensors[f"adam/{name}/v/{k}"], dtype=np.float64)
            st.step = int(tensors[f"adam/{name}/step"])


def _update(g, grads, st, cfg):
    grads = clip_global_norm(grads, cfg.clip_norm)
    adam_step(g.params, grads, st, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


def to_unit(x):
    """[-1, 1] tanh range to [0, 1], clipped."""
    return np.clip((np.asarray(x) + 1.0) / 2.0, 0.0, 1.0)


def train_step(state: TrainingState, x, y):
    """One joint update; returns a dict of scalar metrics."""
    cfg = state.config
    w = cfg.weights
    unet, dae, D, C = state.unet, state.dae, state.disc, state.comparator
    yu, ys = prepare_inputs(y, state.unet_cfg, state.dae_cfg)

    z, tr_u = unet.run(yu, mode="train", update_stats=True)
    x_hat = dae.run(dae_inputs(z, ys), mode="train", update_stats=False)[0]

    for _ in range(cfg.k_disc):
        l_d, gd = discriminator_loss(D, x, z, x_hat, update_stats=True)
        if not np.isfinite(l_d):
            raise NonFiniteLoss("discriminator loss", {"L_D": l_d})
        _update(D, gd, state.adam["disc"], cfg)

    l_gz, dz, parts_z = generator_loss(z, x, D, C, w, parts=True)
    if not np.isfinite(l_gz):
        raise NonFiniteLoss("U-Net generator loss", parts_z)
    gu, _ = unet.backward(dz, tr_u)
    assert gu.keys() == unet.params.keys()
    _update(unet, gu, state.adam["unet"], cfg)

    # the DAE sees the updated U-Net's output; no gradient flows back into the U-Net
    z_new = unet.run(yu, mode="train", update_stats=False)[0]
    x_hat, tr_d = dae.run(dae_inputs(z_new, ys), mode="train", update_stats=True)
    l_gx, dx, parts_x = generator_loss(x_hat, x, D, C, w, parts=True)
    if not np.isfinite(l_gx):
        raise NonFiniteLoss("DAE generator loss", parts_x)
    gdae, _ = dae.backward(dx, tr_d)
    assert gdae.keys() == dae.params.keys()
    _update(dae, gdae, state.adam["dae"], cfg)

    state.iteration += 1
    r_xz = x - z
    r_xhz = x_hat - z_new
    xu = to_unit(x)
    return {
        "iter": state.iteration,
        "L_D": l_d,
        "L_G_z": l_gz,
        "L_G_xhat": l_gx,
        "psnr_z": psnr(to_unit(z), xu),
        "psnr_xhat": psnr(to_unit(x_hat), xu),
        "var_x_minus_z": float(np.var(r_xz)),
        "mean_x_minus_z": float(np.mean(r_xz)),
        "mean_xhat_minus_z": float(np.mean(r_xhz)),
        "var_xhat_minus_z": float(np.var(r_xhz)),
    }


def batch_indices(seed, iteration, batch_size, n):
    """Dataset indices of the batch at ``iteration`` (0-based).

    Batches walk through a fresh seeded permutation each epoch, so any
    iteration's batch is a pure function of (seed, iteration).
    """
    idx = np.empty(batch_size, dtype=int)
    perms = {}
    for j, p in enumerate(range(iteration * batch_size, (iteration + 1) * batch_size)):
        epoch, i = divmod(p, n)
        if epoch not in perms:
            perms[epoch] = np.random.default_rng([seed, epoch]).permutation(n)
        idx[j] = perms[epoch][i]
    return idx


def train_loop(state, xs, ys, iters, checkpoint_every=0, on_checkpoint=None, snapshot_at=(),
               log_every=0):
    """Run ``iters`` steps from ``state.iteration``.

    Returns (trace rows, residual snapshots); snapshots map an iteration in
    ``snapshot_at`` to the x - z residuals of that step's batch.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) == 0 or len(xs) != len(ys):
        raise ValueError("dataset must be nonempty with matching x and y counts")
    trace, snaps = [], {}
    bs = state.config.batch_size
    for _ in range(iters):
        idx = batch_indices(state.seed, state.iteration, bs, len(xs))
        x, y = xs[idx], ys[idx]
        row = train_step(state, x, y)
        trace.append(row)
        if state.iteration in snapshot_at:
            z = state.unet.run(prepare_inputs(y, state.unet_cfg, state.dae_cfg)[0], mode="train",
                               update_stats=False)[0]
            snaps[state.iteration] = (x - z).ravel()
        if log_every and state.iteration % log_every == 0:
            log.info("iter %d L_D %.4f L_G(z) %.4f L_G(xhat) %.4f psnr_xhat %.2f",
                     state.iteration, row["L_D"], row["L_G_z"], row["L_G_xhat"], row["psnr_xhat"])
        if on_checkpoint and checkpoint_every and state.iteration % checkpoint_every == 0:
            on_checkpoint(state)
    return trace, snaps


def write_trace_csv(trace, path, append=False):
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([row["iter"]] + [repr(float(row[c])) for c in TRACE_COLUMNS[1:]])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "iter" else float(v)) for k, v in r.items()} for r in rows]
