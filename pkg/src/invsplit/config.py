"""JSON experiment configuration and the builders that turn it into objects.

One file fully defines an experiment. Kernels are described by kind, size,
seed and parameters rather than stored pixels. The config hash covers
everything that changes results; run length, checkpoint cadence, snapshot
iterations and paths are excluded so a run can be resumed with a longer
``iters``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .forward import MotionBlurPeriodic, StridedConvDown, joint_operator, make_kernel
from .networks import (
    DAEConfig,
    UNetConfig,
    build_comparator,
    build_dae,
    build_discriminator,
    build_unet,
)
from .solvers import ADMMConfig, WienerConfig
from .training import TrainConfig, TrainingState

TASKS = {
    # task -> (downsampling factor, measurement channels)
    "deblur": (1, 3),
    "sr4": (4, 3),
    "joint_sr2_color": (2, 1),
}
UNHASHED = ("iters", "checkpoint_every", "snapshot_at", "paths")

# network seeds are offsets from the experiment seed; the batch order uses the seed itself
SEED_OFFSETS = {"unet": 1, "dae": 2, "disc": 3, "comparator": 4}


def _default_dict():
    return {
        "task": "deblur",
        "image_size": 32,
        "channels": 3,
        "seed": 0,
        "kernel": {"kind": "linear_motion", "size": 9, "seed": 3, "per_channel": False,
                   "params": {"length": 7}},
        "data": {"synthetic_count": 4, "synthetic_seed": 1},
        "unet": {"filters": [32, 64], "kernel": 4, "alpha": 0.2},
        "dae": {"r": 2, "encoder": [48, 48, 48], "decoder": [48, 48], "kernel": 4, "concat_y": True},
        "discriminator": {"levels": None},
        "comparator": {"widths": [8, 16]},
        "init_std": 0.02,
        "preprocess": "auto",
        "train": TrainConfig(lr=1e-3, batch_size=4).to_dict(),
        "solver": {"wiener": {"k_reg": 1e-3},
                   "admm": {"beta": 0.05, "lam": 0.001, "prox": "l1", "z_solver": "auto",
                            "max_iter": 200, "tol_primal": 1e-8}},
        "iters": 2000,
        "checkpoint_every": 500,
        "snapshot_at": [50, 2000],
        "paths": {"data_dir": None, "out_dir": None, "checkpoint_dir": None, "comparator": None},
    }


def _merge(base, over, where=""):
    for k, v in over.items():
        if k not in base:
            raise ValueError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("params",):
            _merge(base[k], v, where + k + ".")
        else:
            base[k] = v
    return base


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=_default_dict)

    def __post_init__(self):
        r = self.raw
        if r["task"] not in TASKS:
            raise ValueError(f"task must be one of {sorted(TASKS)}, got {r['task']!r}")
        d, _ = TASKS[r["task"]]
        if r["image_size"] % d:
            raise ValueError(f"image_size {r['image_size']} not divisible by the {r['task']} factor {d}")
        if r["task"] == "joint_sr2_color" and r["channels"] < 2:
            raise ValueError("joint_sr2_color needs a multi-channel ground truth")
        # constructing the typed configs validates them early
        self.unet_config(), self.dae_config(), self.train_config()

    # -- loading ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, d):
        return cls(_merge(_default_dict(), copy.deepcopy(d)))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.raw, indent=2, sort_keys=True) + "\n")

    def with_overrides(self, **kw):
        d = copy.deepcopy(self.raw)
        for k, v in kw.items():
            if v is not None:
                d[k] = v
        return ExperimentConfig(d)

    def __getitem__(self, k):
        return self.raw[k]

    def config_hash(self):
        d = {k: v for k, v in self.raw.items() if k not in UNHASHED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- derived shapes ------------------------------------------------------------

    @property
    def task(self):
        return self.raw["task"]

    @property
    def size(self):
        return self.raw["image_size"]

    @property
    def x_shape(self):
        return (self.size, self.size, self.raw["channels"])

    @property
    def y_shape(self):
        d, c = TASKS[self.task]
        c = self.raw["channels"] if self.task != "joint_sr2_color" else c
        return (self.size // d, self.size // d, c)

    def seed_for(self, part):
        return self.raw["seed"] + SEED_OFFSETS[part]

    # -- builders --------------------------------------------------------------------

    def kernel(self):
        k = self.raw["kernel"]
        if k["kind"] == "none":
            return None
        channels = self.raw["channels"] if k.get("per_channel") else None
        return make_kernel(k["kind"], k["size"], seed=k["seed"], channels=channels, **k.get("params", {}))

    def operator(self, kernel=None):
        kernel = self.kernel() if kernel is None else kernel
        if self.task == "deblur":
            if kernel is None:
                raise ValueError("deblur needs a blur kernel")
            return MotionBlurPeriodic(kernel, self.x_shape)
        if self.task == "sr4":
            return StridedConvDown(kernel, 4, self.x_shape)
        if kernel is None:
            raise ValueError("joint_sr2_color needs a blur kernel")
        return joint_operator(kernel, self.x_shape, d=2)

    def unet_config(self):
        u = self.raw["unet"]
        return UNetConfig(size=self.size, in_channels=self.y_shape[2], out_channels=self.raw["channels"],
                          filters=tuple(u["filters"]), kernel=u["kernel"], alpha=u["alpha"])

    def dae_config(self):
        d = self.raw["dae"]
        return DAEConfig(size=self.size, channels=self.raw["channels"], r=d["r"], encoder=tuple(d["encoder"]),
                         decoder=tuple(d["decoder"]), kernel=d["kernel"], concat_y=d["concat_y"],
                         y_channels=self.y_shape[2])

    def train_config(self):
        return TrainConfig(**self.raw["train"])

    def wiener_config(self):
        return WienerConfig(**self.raw["solver"]["wiener"])

    def admm_config(self, operator):
        a = dict(self.raw["solver"]["admm"])
        if a.get("z_solver", "auto") == "auto":
            a["z_solver"] = "fourier" if operator.is_bccb else "cg"
        return ADMMConfig(**a)

    def comparator(self):
        from .io import load_comparator

        path = self.raw["paths"].get("comparator")
        if path:
            return load_comparator(path, self.size, self.raw["channels"], tuple(self.raw["comparator"]["widths"]))
        return build_comparator(self.size, self.raw["channels"], seed=self.seed_for("comparator"),
                                widths=tuple(self.raw["comparator"]["widths"]))

    def networks(self):
        ucfg, dcfg = self.unet_config(), self.dae_config()
        std = self.raw["init_std"]
        unet = build_unet(ucfg, seed=self.seed_for("unet"), init_std=std)
        dae = build_dae(dcfg, seed=self.seed_for("dae"), init_std=std)
        disc = build_discriminator(self.size, self.raw["channels"], seed=self.seed_for("disc"),
                                   levels=self.raw["discriminator"]["levels"], init_std=std)
        return unet, dae, disc

    def training_state(self):
        unet, dae, disc = self.networks()
        return TrainingState(unet, dae, disc, self.comparator(), self.unet_config(), self.dae_config(),
                             self.train_config(), seed=self.raw["seed"])
