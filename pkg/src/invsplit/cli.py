"""Command-line front end: degrade, solve, train, infer, eval, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .config import ExperimentConfig
from .data import synthetic_images, to_signed, to_unit
from .forward import bicubic_resize, load_kernel, save_kernel
from .io import (
    CheckpointError,
    list_images,
    load_checkpoint,
    quantize8,
    read_csv,
    read_image_dir,
    read_png,
    save_checkpoint,
    write_csv,
    write_png,
)
from .metrics import psnr_report, ssim
from .networks import inversenet_forward
from .solvers import admm_solve, wiener_deconvolve
from .training import read_trace_csv, train_loop, write_trace_csv

log = logging.getLogger("invsplit")


class CLIError(Exception):
    pass


# -- shared helpers -------------------------------------------------------------

def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=getattr(args, "seed", None))


def out_dir(args, cfg, default):
    d = Path(args.out or cfg["paths"].get("out_dir") or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def fit_image(img, cfg):
    """Ground-truth image to the configured size and channel count."""
    h, w, c = cfg.x_shape
    if img.shape[2] == 1 and c > 1:
        img = np.repeat(img, c, axis=2)
    elif img.shape[2] != c:
        raise ValueError(f"image has {img.shape[2]} channels, config expects {c}")
    if img.shape[:2] != (h, w):
        img = np.clip(bicubic_resize(img[None], h, w)[0], 0.0, 1.0)
    return img


def ground_truth(cfg, input_dir=None):
    """(names, [0, 1] images, failures) from a PNG directory or the synthetic generator."""
    if input_dir:
        names, imgs, failed = read_image_dir(input_dir)
        good_names, good = [], []
        for n, im in zip(names, imgs):
            try:
                good.append(fit_image(im, cfg))
                good_names.append(n)
            except ValueError as e:
                failed[n] = str(e)
        return good_names, good, failed
    d = cfg["data"]
    xs = synthetic_images(d["synthetic_count"], cfg.size, seed=d["synthetic_seed"], channels=cfg["channels"])
    return [f"img{i:04d}.png" for i in range(len(xs))], list(xs), {}


def training_pairs(cfg):
    """Signed (x, y) arrays for training."""
    data_dir = cfg["paths"].get("data_dir")
    if data_dir:
        names = list_images(Path(data_dir) / "x")
        _, xs, fx = read_image_dir(Path(data_dir) / "x", names)
        _, ys, fy = read_image_dir(Path(data_dir) / "y", names)
        if fx or fy:
            raise CLIError(f"unreadable training images: {sorted({**fx, **fy})}")
        xs, ys = np.stack(xs), np.stack(ys)
        if xs.shape[1:] != cfg.x_shape or ys.shape[1:] != cfg.y_shape:
            raise CLIError(f"training data shapes {xs.shape[1:]}/{ys.shape[1:]} do not match config "
                           f"{cfg.x_shape}/{cfg.y_shape}")
        return to_signed(xs), to_signed(ys)
    _, xs, _ = ground_truth(cfg)
    x = to_signed(np.stack(xs))
    return x, cfg.operator().forward(x)


# -- degrade ----------------------------------------------------------------------

def cmd_degrade(args):
    cfg = load_config(args)
    out = out_dir(args, cfg, "degraded")
    names, xs, failed = ground_truth(cfg, args.input)
    kernel = cfg.kernel()
    A = cfg.operator(kernel)
    if kernel is not None:
        save_kernel(kernel, out / "kernel.txt")
    rows = []
    for n, x in zip(names, xs):
        y = A.forward(x[None])[0]
        write_png(out / "x" / n, x)
        write_png(out / "y" / n, np.clip(y, 0.0, 1.0))
        rows.append([n, "ok", ""])
    rows += [[n, "error", msg] for n, msg in sorted(failed.items())]
    write_csv(out / "degrade_summary.csv", ["file", "status", "message"], rows)
    print(f"degrade: {len(names)} pairs written to {out}, {len(failed)} failed")
    for n, msg in sorted(failed.items()):
        print(f"  {n}: {msg}", file=sys.stderr)
    return 1 if failed and not names else 0


# -- solve ---------------------------------------------------------------------------

def _kernel_for_solve(args, cfg):
    data_dir = cfg["paths"].get("data_dir")
    path = args.kernel or (Path(data_dir) / "kernel.txt" if data_dir else None)
    if path and Path(path).is_file():
        return load_kernel(path)
    if cfg["kernel"]["kind"] == "none":
        return None
    raise CLIError(f"kernel file not found: {path}" if path else "no kernel file given (--kernel)")


def cmd_solve(args):
    cfg = load_config(args)
    method = args.method or "wiener"
    if method not in ("wiener", "admm"):
        raise CLIError(f"solve supports --method wiener|admm, got {method!r}")
    data_dir = cfg["paths"].get("data_dir")
    y_dir = Path(args.input or (Path(data_dir) / "y" if data_dir else ""))
    if not str(args.input or data_dir or ""):
        raise CLIError("no measurement directory (--input or paths.data_dir)")
    ref_dir = args.reference or (Path(data_dir) / "x" if data_dir and (Path(data_dir) / "x").is_dir() else None)
    kernel = _kernel_for_solve(args, cfg)
    if method == "wiener" and cfg.task != "deblur":
        raise CLIError("the Wiener baseline only applies to the deblur task")
    A = cfg.operator(kernel)
    out = out_dir(args, cfg, f"solve_{method}")

    names, ys, failed = read_image_dir(y_dir)
    traces, metric_rows = {}, []
    for n, y in zip(names, ys):
        if y.shape != cfg.y_shape:
            failed[n] = f"expected measurement of shape {cfg.y_shape}, got {y.shape}"
            continue
        if method == "wiener":
            x = wiener_deconvolve(y[None], kernel, cfg.wiener_config())[0]
        else:
            res = admm_solve(y[None], A, cfg.admm_config(A))
            x = res.x[0]
            traces[n] = res.trace
            write_csv(out / "admm" / (Path(n).stem + ".csv"), ["iteration", "primal_residual", "objective"],
                      [[r["iteration"], r["primal_residual"], r["objective"]] for r in res.trace])
        x = quantize8(x)  # score what is written
        write_png(out / "restored" / n, x)
        if ref_dir:
            ref = read_png(Path(ref_dir) / n)
            db, exact = psnr_report(x, ref)
            metric_rows.append([n, db, ssim(x, ref), int(exact)])
    if metric_rows:
        write_csv(out / "metrics.csv", ["file", "psnr", "ssim", "exact"], metric_rows)
    if traces:
        plotting.plot_admm_trace(traces, out / "figures" / "admm_trace.png")
    for n, msg in sorted(failed.items()):
        print(f"  {n}: {msg}", file=sys.stderr)
    print(f"solve[{method}]: {len(names) - len(failed)} images restored into {out / 'restored'}")
    return 0 if not failed else 1


# -- train ---------------------------------------------------------------------------------

def checkpoint_dir(root, iteration):
    return Path(root) / f"iter_{iteration:06d}"


def save_state(state, cfg, root):
    d = checkpoint_dir(root, state.iteration)
    save_checkpoint(d, state.tensors(), cfg.config_hash(), state.iteration,
                    meta={"comparator": state.comparator.provenance.replace(" ", "_")})
    return d


def restore_state(cfg, path):
    state = cfg.training_state()
    tensors, info = load_checkpoint(path, expect_hash=cfg.config_hash())
    state.load_tensors(tensors)
    state.iteration = info["iteration"]
    return state


def evaluate_training_set(state, x, y, preprocess="auto"):
    """Inference-mode PSNR of z and x_hat over the whole training set."""
    z, xh = inversenet_forward(state.unet, state.dae, y, state.unet_cfg, state.dae_cfg, preprocess)
    xu = to_unit(x)
    return psnr_report(to_unit(z), xu)[0], psnr_report(to_unit(xh), xu)[0]


def run_training(cfg, out, resume=None, iters=None, quiet=True):
    """Train to ``iters`` total iterations (default ``cfg['iters']``), writing all artifacts under ``out``.

    Returns (state, trace rows of this invocation, residual snapshots).
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_root = Path(cfg["paths"].get("checkpoint_dir") or out / "checkpoints")
    target = cfg["iters"] if iters is None else iters
    x, y = training_pairs(cfg)
    state = restore_state(cfg, resume) if resume else cfg.training_state()
    start = state.iteration
    if target < start:
        raise CLIError(f"checkpoint is at iteration {start}, beyond the requested {target}")
    cfg.save(out / "config.json")

    trace_path = out / "trace.csv"
    kept = []
    if resume and trace_path.is_file():
        kept = [r for r in read_trace_csv(trace_path) if r["iter"] <= start]
    write_trace_csv(kept, trace_path)

    every = cfg["checkpoint_every"]
    if start == 0:
        save_state(state, cfg, ckpt_root)

    def on_ckpt(st):
        save_state(st, cfg, ckpt_root)

    trace, snaps = train_loop(state, x, y, target - start, checkpoint_every=every, on_checkpoint=on_ckpt,
                              snapshot_at=set(cfg["snapshot_at"]), log_every=0 if quiet else 50)
    write_trace_csv(trace, trace_path, append=True)
    if not (every and state.iteration % every == 0) and state.iteration != start:
        save_state(state, cfg, ckpt_root)

    pz, px = evaluate_training_set(state, x, y, cfg["preprocess"])
    write_csv(out / "train_eval.csv", ["iter", "psnr_z", "psnr_xhat"], [[state.iteration, pz, px]])
    full = kept + trace
    if full:
        plotting.plot_training_trace(full, out / "figures" / "training_trace.png")
    if snaps:
        write_csv(out / "residual_stats.csv", ["iter", "mean", "var"],
                  [[k, float(np.mean(v)), float(np.var(v))] for k, v in sorted(snaps.items())])
        plotting.plot_residual_histograms(snaps, out / "figures" / "residual_histograms.png")
    return state, trace, snaps


def cmd_train(args):
    cfg = load_config(args)
    out = out_dir(args, cfg, "train")
    if args.iters is not None and args.iters < 0:
        raise CLIError("--iters must be >= 0")
    state, trace, _ = run_training(cfg, out, resume=args.checkpoint, iters=args.iters, quiet=False)
    pz, px = read_csv(out / "train_eval.csv")[0]["psnr_z"], read_csv(out / "train_eval.csv")[0]["psnr_xhat"]
    print(f"train: {len(trace)} iterations, now at {state.iteration}; "
          f"training-set PSNR z {float(pz):.2f} dB, x_hat {float(px):.2f} dB; outputs in {out}")
    return 0


# -- infer -----------------------------------------------------------------------------------

def cmd_infer(args):
    cfg = load_config(args)
    if not args.checkpoint:
        raise CLIError("infer needs --checkpoint")
    data_dir = cfg["paths"].get("data_dir")
    y_dir = args.input or (Path(data_dir) / "y" if data_dir else None)
    if not y_dir:
        raise CLIError("no measurement directory (--input or paths.data_dir)")
    state = restore_state(cfg, args.checkpoint)
    out = out_dir(args, cfg, "infer")
    names, ys, failed = read_image_dir(y_dir)
    for n, y in zip(names, ys):
        if y.shape != cfg.y_shape:
            raise CLIError(f"{n}: expected a {cfg.y_shape[0]}x{cfg.y_shape[1]}x{cfg.y_shape[2]} measurement, "
                           f"got {y.shape[0]}x{y.shape[1]}x{y.shape[2]}")
        z, xh = inversenet_forward(state.unet, state.dae, to_signed(y[None]), state.unet_cfg, state.dae_cfg,
                                   cfg["preprocess"])
        write_png(Path(out) / "z" / n, to_unit(z[0]))
        write_png(Path(out) / "xhat" / n, to_unit(xh[0]))
    for n, msg in sorted(failed.items()):
        print(f"  {n}: {msg}", file=sys.stderr)
    print(f"infer: {len(names)} images -> {out}/z and {out}/xhat")
    return 0 if not failed else 1


# -- eval --------------------------------------------------------------------------------------

def evaluate_dirs(restored, reference):
    a, b = set(list_images(restored)), set(list_images(reference))
    if a != b:
        raise CLIError(f"file sets differ: only in {restored}: {sorted(a - b)}; "
                       f"only in {reference}: {sorted(b - a)}")
    rows = []
    for n in sorted(a):
        x, r = read_png(Path(restored) / n), read_png(Path(reference) / n)
        if x.shape != r.shape:
            raise CLIError(f"{n}: shape {x.shape} vs reference {r.shape}")
        db, exact = psnr_report(x, r)
        rows.append({"file": n, "psnr": db, "ssim": ssim(x, r), "exact": exact})
    return rows


def cmd_eval(args):
    if not (args.input and args.reference):
        raise CLIError("eval needs --input (restored images) and --reference (ground truth)")
    out = Path(args.out or "eval")
    rows = evaluate_dirs(args.input, args.reference)
    write_csv(out / "metrics.csv", ["file", "psnr", "ssim"], [[r["file"], r["psnr"], r["ssim"]] for r in rows])
    n = len(rows)
    mp = sum(r["psnr"] for r in rows) / n if n else float("nan")
    ms = sum(r["ssim"] for r in rows) / n if n else float("nan")
    ex = sum(r["exact"] for r in rows)
    write_csv(out / "summary.csv", ["images", "mean_psnr", "mean_ssim", "exact_matches"], [[n, mp, ms, ex]])
    if rows:
        plotting.plot_metric_bars(rows, out / "figures" / "metrics.png")
    print(f"eval: {n} images, mean PSNR {mp:.3f} dB, mean SSIM {ms:.4f}, {ex} exact matches")
    return 0


# -- gradcheck -----------------------------------------------------------------------------------

def cmd_gradcheck(args):
    from .selfcheck import run_checks

    results = run_checks(seed=args.seed or 0)
    lines = [f"{'PASS' if ok else 'FAIL'}  {name:<40s} {value:.3e} (limit {limit:.0e})"
             for name, value, limit, ok in results]
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "gradcheck_report.txt").write_text(report)
    return 0 if all(r[3] for r in results) else 1


# -- entry point -------------------------------------------------------------------------------------

COMMANDS = {
    "degrade": (cmd_degrade, "write (x, y) PNG pairs and the kernel file"),
    "solve": (cmd_solve, "restore measurements with the Wiener or ADMM baseline"),
    "train": (cmd_train, "train the U-Net/DAE pair adversarially; resumable"),
    "infer": (cmd_infer, "write z and x_hat for each measurement"),
    "eval": (cmd_eval, "PSNR/SSIM of restored images against references"),
    "gradcheck": (cmd_gradcheck, "run the gradient and operator oracles and print a report"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="invsplit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", metavar="PATH", help="experiment JSON")
        s.add_argument("--seed", type=int, metavar="N", help="override the experiment seed")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--checkpoint", metavar="PATH", help="checkpoint directory to resume or run")
        s.add_argument("--method", metavar="NAME", help="solver for 'solve': wiener or admm")
        s.add_argument("--input", metavar="DIR", help="input image directory")
        s.add_argument("--reference", metavar="DIR", help="ground-truth directory")
        s.add_argument("--kernel", metavar="PATH", help="kernel file for 'solve'")
        s.add_argument("--iters", type=int, metavar="N", help="total iterations for 'train'")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command][0](args)
    except (CLIError, CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"invsplit {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
