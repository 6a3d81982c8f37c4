"""On-disk formats: 8-bit PNG images, raw-array checkpoints and CSV tables."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .networks import Comparator, comparator_layers
from .tensor.graph import Graph

MANIFEST = "manifest.txt"
MAGIC = "invsplit-checkpoint 1"
IMAGE_SUFFIXES = (".png",)


class CheckpointError(ValueError):
    pass


# -- images -----------------------------------------------------------------

def read_png(path):
    """(h, w, c) float64 in [0, 1]; grayscale stays single-channel, alpha is dropped."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)[:, :, None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize8(img):
    """Values exactly as ``write_png`` would store them."""
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0) / 255.0


def write_png(path, img):
    """Write a [0, 1] image (h, w, c) with c in {1, 3}, rounding to 8 bits."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"cannot write image of shape {a.shape} as PNG")
    if not np.isfinite(a).all():
        raise ValueError(f"non-finite pixels in {path}")
    q = np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q[:, :, 0] if q.shape[2] == 1 else q).save(path)


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"image directory not found: {d}")
    return sorted(p.name for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_image_dir(directory, names=None):
    """Returns (names, images, failures) where failures maps name -> error message."""
    d = Path(directory)
    names = list_images(d) if names is None else list(names)
    ok, imgs, failed = [], [], {}
    for n in names:
        try:
            imgs.append(read_png(d / n))
            ok.append(n)
        except Exception as e:  # noqa: BLE001  per-file failure is reported, not fatal
            failed[n] = f"{type(e).__name__}: {e}"
    return ok, imgs, failed


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(directory, tensors, config_hash, iteration, meta=None):
    """Write ``manifest.txt`` plus one little-endian float64 file per tensor."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [MAGIC, f"config_hash {config_hash}", f"iteration {int(iteration)}"]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta {k} {v}")
    lines.append(f"tensors {len(tensors)}")
    for i, name in enumerate(sorted(tensors)):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        fname = f"t{i:05d}.f64"
        (d / fname).write_bytes(arr.astype("<f8").tobytes())
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{fname} {name} {shape}")
    tmp = d / (MANIFEST + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, d / MANIFEST)


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no {MANIFEST} in {directory}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint manifest")
    info = {"meta": {}, "entries": []}
    it = iter(lines[1:])
    for line in it:
        key, _, rest = line.partition(" ")
        if key == "config_hash":
            info["config_hash"] = rest
        elif key == "iteration":
            info["iteration"] = int(rest)
        elif key == "meta":
            k, _, v = rest.partition(" ")
            info["meta"][k] = v
        elif key == "tensors":
            for _ in range(int(rest)):
                fname, name, shape = next(it).split(" ")
                dims = () if shape == "scalar" else tuple(int(s) for s in shape.split(","))
                info["entries"].append((fname, name, dims))
        else:
            raise CheckpointError(f"{path}: unexpected line {line!r}")
    return info


def load_checkpoint(directory, expect_hash=None):
    """Returns (tensors, info). Refuses a checkpoint written under a different config."""
    info = read_manifest(directory)
    if expect_hash is not None and info.get("config_hash") != expect_hash:
        raise CheckpointError(
            f"checkpoint {directory} was written with config hash {info.get('config_hash')}, "
            f"current config hashes to {expect_hash}; refusing to resume")
    tensors = {}
    for fname, name, dims in info["entries"]:
        p = Path(directory) / fname
        raw = p.read_bytes()
        n = int(np.prod(dims, dtype=np.int64))
        if len(raw) != 8 * n:
            raise CheckpointError(f"{p}: expected {8 * n} bytes for shape {dims}, found {len(raw)}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    return tensors, info


def save_comparator(directory, comparator):
    save_checkpoint(directory, {f"param/{k}": v for k, v in comparator.graph.params.items()}, "comparator", 0,
                    meta={"provenance": comparator.provenance})


def load_comparator(directory, size, channels, widths):
    """Comparator with externally supplied weights in checkpoint format."""
    tensors, _ = load_checkpoint(directory)
    g = Graph(comparator_layers(channels, widths), {"image": (size, size, channels)}, name="comparator")
    g.load_state(tensors)
    return Comparator(g, provenance=f"external:{directory}")


# -- CSV ---------------------------------------------------------------------

def write_csv(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
