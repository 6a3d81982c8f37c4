import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invsplit import cli
from invsplit.config import ExperimentConfig
from invsplit.forward import Kernel2D, MotionBlurPeriodic, make_kernel, materialize_dense, save_kernel
from invsplit.io import (
    CheckpointError,
    load_checkpoint,
    load_comparator,
    read_csv,
    read_png,
    save_checkpoint,
    save_comparator,
    write_png,
)
from invsplit.networks import build_comparator
from invsplit.training import read_trace_csv

TINY = {
    "image_size": 16,
    "unet": {"filters": [4, 8]},
    "dae": {"encoder": [8], "decoder": [8]},
    "comparator": {"widths": [4, 8]},
    "data": {"synthetic_count": 3},
    "iters": 4,
    "checkpoint_every": 2,
    "snapshot_at": [1, 4],
}


def write_config(path, **extra):
    d = json.loads(json.dumps(TINY))
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k].update(v)
        else:
            d[k] = v
    Path(path).write_text(json.dumps(d))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


# -- formats -------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 3]))
def test_png_roundtrip_quantization(tmp_path_factory, seed, c):
    img = np.random.default_rng(seed).uniform(size=(5, 7, c))
    p = tmp_path_factory.mktemp("png") / "a.png"
    write_png(p, img)
    back = read_png(p)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1 / 510 + 1e-12


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    t = {"a/param/w": rng.normal(size=(2, 3, 4)), "b/scalar": np.array(3.5), "c": np.array([np.pi, -0.0, 1e-300])}
    save_checkpoint(tmp_path / "ck", t, "abc123", 17, meta={"note": "x"})
    back, info = load_checkpoint(tmp_path / "ck", expect_hash="abc123")
    assert info["iteration"] == 17 and info["meta"]["note"] == "x"
    assert set(back) == set(t)
    for k in t:
        assert back[k].shape == t[k].shape
        assert back[k].tobytes() == t[k].astype("<f8").tobytes()
    manifest = (tmp_path / "ck" / "manifest.txt").read_text()
    assert "config_hash abc123" in manifest and "a/param/w 2,3,4" in manifest
    with pytest.raises(CheckpointError, match="refusing"):
        load_checkpoint(tmp_path / "ck", expect_hash="other")
    first = sorted((tmp_path / "ck").glob("*.f64"))[0]
    first.write_bytes(first.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(tmp_path / "ck")


def test_external_comparator(tmp_path):
    c = build_comparator(16, 3, seed=21, widths=(4, 8))
    save_comparator(tmp_path / "cmp", c)
    ext = load_comparator(tmp_path / "cmp", 16, 3, (4, 8))
    x = np.random.default_rng(0).normal(size=(1, 16, 16, 3))
    assert np.array_equal(ext.features(x), c.features(x))
    assert ext.provenance.startswith("external:")
    cfg = ExperimentConfig.from_dict({**TINY, "paths": {"comparator": str(tmp_path / "cmp")}})
    assert np.array_equal(cfg.comparator().features(x), c.features(x))


def test_config_hash_and_validation(tmp_path):
    a = ExperimentConfig.from_dict(TINY)
    b = ExperimentConfig.from_dict({**TINY, "iters": 99, "checkpoint_every": 7, "paths": {"data_dir": "/x"}})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ExperimentConfig.from_dict({**TINY, "seed": 1}).config_hash()
    with pytest.raises(ValueError, match="unknown config key"):
        ExperimentConfig.from_dict({"unet": {"filterz": [1]}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"task": "inpaint"})
    a.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json").config_hash() == a.config_hash()


# -- degrade ----------------------------------------------------------------------

@pytest.mark.parametrize("task,size,yshape", [
    ("deblur", 16, (16, 16, 3)),
    ("sr4", 256, (64, 64, 3)),
    ("joint_sr2_color", 64, (32, 32, 1)),
])
def test_degrade_shapes(tmp_path, task, size, yshape):
    extra = {"task": task, "image_size": size, "data": {"synthetic_count": 1}}
    if task == "joint_sr2_color":
        extra["kernel"] = {"per_channel": True, "size": 5, "params": {"length": 3}}
    if task == "sr4":
        extra["kernel"] = {"kind": "gaussian", "size": 5, "params": {"sigma": 1.0}}
    cfg = write_config(tmp_path / "c.json", **extra)
    assert run("degrade", "--config", cfg, "--out", tmp_path / "d") == 0
    assert read_png(tmp_path / "d" / "x" / "img0000.png").shape == (size, size, 3)
    assert read_png(tmp_path / "d" / "y" / "img0000.png").shape == yshape
    assert (tmp_path / "d" / "kernel.txt").read_text().startswith("kernel ")


def test_degrade_input_dir_with_bad_file_and_determinism(tmp_path):
    src = tmp_path / "src"
    rng = np.random.default_rng(1)
    write_png(src / "a.png", rng.uniform(size=(16, 16, 3)))
    write_png(src / "b.png", rng.uniform(size=(20, 24, 1)))  # resized, gray replicated
    (src / "broken.png").write_bytes(b"not a png")
    cfg = write_config(tmp_path / "c.json")
    for out in ("d1", "d2"):
        assert run("degrade", "--config", cfg, "--input", src, "--out", tmp_path / out) == 0
    rows = read_csv(tmp_path / "d1" / "degrade_summary.csv")
    status = {r["file"]: r["status"] for r in rows}
    assert status == {"a.png": "ok", "b.png": "ok", "broken.png": "error"}
    for n in ("a.png", "b.png"):
        assert (tmp_path / "d1" / "y" / n).read_bytes() == (tmp_path / "d2" / "y" / n).read_bytes()
    assert b"\r" not in (tmp_path / "d1" / "degrade_summary.csv").read_bytes()


# -- solve ---------------------------------------------------------------------------

def test_solve_wiener_delta_kernel_exact(tmp_path):
    cfg = write_config(tmp_path / "c.json", solver={"wiener": {"k_reg": 0.0}},
                       kernel={"kind": "linear_motion", "size": 3, "params": {"length": 1}},
                       paths={"data_dir": str(tmp_path / "d")})
    assert run("degrade", "--config", cfg, "--out", tmp_path / "d") == 0
    assert run("solve", "--config", cfg, "--method", "wiener", "--out", tmp_path / "s") == 0
    rows = read_csv(tmp_path / "s" / "metrics.csv")
    assert len(rows) == 3 and all(r["exact"] == "1" and float(r["psnr"]) == 99.0 for r in rows)


def test_solve_admm_lambda_zero_matches_dense(tmp_path):
    k = Kernel2D(np.array([[0.0, 0.1, 0.0], [0.1, 0.6, 0.1], [0.0, 0.1, 0.0]]))
    save_kernel(k, tmp_path / "k.txt")
    cfg = write_config(tmp_path / "c.json", solver={"admm": {"lam": 0.0, "beta": 0.05, "max_iter": 500,
                                                             "tol_primal": 1e-12}})
    y = np.clip(MotionBlurPeriodic(k, (16, 16, 3)).forward(np.random.default_rng(2).uniform(size=(1, 16, 16, 3))),
                0, 1)[0]
    write_png(tmp_path / "y" / "a.png", y)
    assert run("solve", "--config", cfg, "--method", "admm", "--kernel", tmp_path / "k.txt",
               "--input", tmp_path / "y", "--out", tmp_path / "s") == 0
    yq = read_png(tmp_path / "y" / "a.png")
    M = materialize_dense(MotionBlurPeriodic(k, (16, 16, 1)))
    expect = np.stack([np.linalg.lstsq(M, yq[:, :, c].ravel(), rcond=None)[0].reshape(16, 16) for c in range(3)],
                      axis=2)
    got = read_png(tmp_path / "s" / "restored" / "a.png")
    assert np.abs(got - np.clip(expect, 0, 1)).max() <= 1 / 510 + 1e-6
    trace = read_csv(tmp_path / "s" / "admm" / "a.csv")
    assert float(trace[-1]["primal_residual"]) <= 1e-12
    assert (tmp_path / "s" / "figures" / "admm_trace.png").stat().st_size > 0


def test_solve_errors(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    write_png(tmp_path / "y" / "a.png", np.zeros((16, 16, 3)))
    assert run("solve", "--config", cfg, "--method", "wiener", "--input", tmp_path / "y",
               "--kernel", tmp_path / "missing.txt", "--out", tmp_path / "s") == 2
    assert "kernel file not found" in capsys.readouterr().err
    assert run("solve", "--config", cfg, "--method", "magic", "--input", tmp_path / "y") == 2


# -- train / infer ---------------------------------------------------------------------------

def test_zero_iteration_train_writes_initial_checkpoint_only(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", "--config", cfg, "--iters", 0, "--out", tmp_path / "t") == 0
    assert [p.name for p in (tmp_path / "t" / "checkpoints").iterdir()] == ["iter_000000"]
    assert read_trace_csv(tmp_path / "t" / "trace.csv") == []


def test_train_resume_matches_uninterrupted(tmp_path):
    cfg = write_config(tmp_path / "c.json", iters=5)
    assert run("train", "--config", cfg, "--out", tmp_path / "full") == 0
    assert run("train", "--config", cfg, "--iters", 2, "--out", tmp_path / "part") == 0
    ck = tmp_path / "part" / "checkpoints" / "iter_000002"
    assert run("train", "--config", cfg, "--checkpoint", ck, "--out", tmp_path / "part") == 0
    a = read_trace_csv(tmp_path / "full" / "trace.csv")
    b = read_trace_csv(tmp_path / "part" / "trace.csv")
    assert [r["iter"] for r in a] == [r["iter"] for r in b] == [1, 2, 3, 4, 5]
    for r, s in zip(a, b):
        assert all(abs(r[k] - s[k]) <= 1e-10 for k in r)
    fa, _ = load_checkpoint(tmp_path / "full" / "checkpoints" / "iter_000005")
    fb, _ = load_checkpoint(tmp_path / "part" / "checkpoints" / "iter_000005")
    assert all(np.array_equal(fa[k], fb[k]) for k in fa)
    for f in ("training_trace.png", "residual_histograms.png"):
        assert (tmp_path / "full" / "figures" / f).is_file()


def test_train_refuses_mismatched_config(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", "--config", cfg, "--iters", 0, "--out", tmp_path / "t") == 0
    assert run("train", "--config", cfg, "--seed", 5, "--checkpoint",
               tmp_path / "t" / "checkpoints" / "iter_000000", "--out", tmp_path / "t") == 2
    assert "refusing" in capsys.readouterr().err


def test_infer_deterministic_batch_independent_and_cross_dataset(tmp_path, capsys):
    cfg_a = write_config(tmp_path / "a.json", iters=2, paths={"data_dir": str(tmp_path / "A")})
    cfg_b = write_config(tmp_path / "b.json", iters=2, data={"synthetic_seed": 9, "synthetic_count": 2})
    assert run("degrade", "--config", cfg_a, "--out", tmp_path / "A") == 0
    assert run("degrade", "--config", cfg_b, "--out", tmp_path / "B") == 0
    assert run("train", "--config", cfg_a, "--out", tmp_path / "t") == 0
    ck = tmp_path / "t" / "checkpoints" / "iter_000002"
    # train on A, infer on B with the same operator
    for out in ("i1", "i2"):
        assert run("infer", "--config", cfg_a, "--checkpoint", ck, "--input", tmp_path / "B" / "y",
                   "--out", tmp_path / out) == 0
    for sub in ("z", "xhat"):
        for n in ("img0000.png", "img0001.png"):
            assert (tmp_path / "i1" / sub / n).read_bytes() == (tmp_path / "i2" / sub / n).read_bytes()
    single = tmp_path / "single"
    single.mkdir()
    shutil.copy(tmp_path / "B" / "y" / "img0001.png", single / "img0001.png")
    assert run("infer", "--config", cfg_a, "--checkpoint", ck, "--input", single, "--out", tmp_path / "i3") == 0
    assert (tmp_path / "i3" / "xhat" / "img0001.png").read_bytes() == \
        (tmp_path / "i1" / "xhat" / "img0001.png").read_bytes()

    bad = tmp_path / "bad"
    write_png(bad / "x.png", np.zeros((8, 8, 3)))
    capsys.readouterr()
    assert run("infer", "--config", cfg_a, "--checkpoint", ck, "--input", bad, "--out", tmp_path / "i4") == 2
    assert "16x16x3" in capsys.readouterr().err


# -- eval -------------------------------------------------------------------------------------

def _img_dir(path, seed, names=("a.png", "b.png", "c.png")):
    rng = np.random.default_rng(seed)
    for n in names:
        write_png(path / n, rng.uniform(size=(16, 16, 3)))
    return path


def test_eval_identical_dirs(tmp_path):
    d = _img_dir(tmp_path / "x", 0)
    assert run("eval", "--input", d, "--reference", d, "--out", tmp_path / "e") == 0
    s = read_csv(tmp_path / "e" / "summary.csv")[0]
    assert float(s["mean_ssim"]) == 1.0 and s["exact_matches"] == "3" and float(s["mean_psnr"]) == 99.0
    assert read_csv(tmp_path / "e" / "metrics.csv")[0].keys() == {"file", "psnr", "ssim"}


def test_eval_aggregates_and_order_independence(tmp_path):
    ref = _img_dir(tmp_path / "ref", 1)
    a = _img_dir(tmp_path / "a", 2)
    b = tmp_path / "b"
    b.mkdir()
    for n in ("c.png", "a.png", "b.png"):  # different creation order
        shutil.copy(a / n, b / n)
    assert run("eval", "--input", a, "--reference", ref, "--out", tmp_path / "ea") == 0
    assert run("eval", "--input", b, "--reference", ref, "--out", tmp_path / "eb") == 0
    assert (tmp_path / "ea" / "summary.csv").read_bytes() == (tmp_path / "eb" / "summary.csv").read_bytes()
    rows = read_csv(tmp_path / "ea" / "metrics.csv")
    s = read_csv(tmp_path / "ea" / "summary.csv")[0]
    assert abs(sum(float(r["psnr"]) for r in rows) / 3 - float(s["mean_psnr"])) < 1e-12
    assert abs(sum(float(r["ssim"]) for r in rows) / 3 - float(s["mean_ssim"])) < 1e-12


def test_eval_name_mismatch(tmp_path, capsys):
    a = _img_dir(tmp_path / "a", 0, ("a.png", "b.png"))
    b = _img_dir(tmp_path / "b", 0, ("a.png", "z.png"))
    assert run("eval", "--input", a, "--reference", b, "--out", tmp_path / "e") == 2
    err = capsys.readouterr().err
    assert "b.png" in err and "z.png" in err


# -- gradcheck ------------------------------------------------------------------------------------

def test_gradcheck_report(tmp_path, monkeypatch, capsys):
    import invsplit.selfcheck as sc

    monkeypatch.setattr(sc, "run_checks", lambda seed=0: [("layer/x", 1e-9, 1e-4, True)])
    assert run("gradcheck", "--out", tmp_path) == 0
    assert "PASS  layer/x" in (tmp_path / "gradcheck_report.txt").read_text()
    monkeypatch.setattr(sc, "run_checks", lambda seed=0: [("loss/y", 1.0, 1e-4, False)])
    assert run("gradcheck") == 1
    assert "FAIL  loss/y" in capsys.readouterr().out
