import json
import subprocess
import sys

import numpy as np
import pytest

from clickview.cli import main
from clickview.meshes import keypoint_registry
from clickview.model import default_config, init_params, save_checkpoint


TINY_DATA = {"data": {"classes": ["car"], "renders_per_class": 10, "image_size": 32,
                      "split_fractions": [0.5, 0.2, 0.3], "seed": 3}}

TINY_MODEL = dict(
    image_size=32,
    conv_specs=((6, 3, 2, 1), (8, 3, 1, 1), (12, 3, 2, 1), (16, 3, 1, 1)),
    attention_grid=(4, 4), kp_pool_factor=8, kp_map_feature_dim=16,
    kp_class_feature_dim=8, image_feature_dim=32, fused_dim=48, n_bins=24,
    kp_classes={k: tuple(v) for k, v in keypoint_registry(("car",)).items()})


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(TINY_DATA))
    assert run_cli("gen-data", "--config", str(cfg_path), "--out", str(root / "data")) == 0
    mcfg = default_config("ch_full", **TINY_MODEL)
    params = init_params(mcfg, np.random.default_rng(1))
    save_checkpoint(params, mcfg, root / "model.ckpt")
    return root


def test_gen_data_deterministic_byte_identical(workdir):
    cfg = workdir / "config.json"
    assert run_cli("gen-data", "--config", str(cfg), "--seed", "7",
                   "--out", str(workdir / "d1")) == 0
    assert run_cli("gen-data", "--config", str(cfg), "--seed", "7",
                   "--out", str(workdir / "d2")) == 0
    assert (workdir / "d1" / "index").read_bytes() == (workdir / "d2" / "index").read_bytes()
    a = sorted((workdir / "d1" / "renders").iterdir())
    b = sorted((workdir / "d2" / "renders").iterdir())
    assert [f.name for f in a] == [f.name for f in b]
    for fa, fb in zip(a, b):
        assert fa.read_bytes() == fb.read_bytes()


def test_eval_oracle_stub_perfect(workdir, capsys):
    out = workdir / "oracle.json"
    rc = run_cli("eval", "--checkpoint", str(workdir / "model.ckpt"),
                 "--dataset", str(workdir / "data"), "--oracle", "--out", str(out))
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["mean_class_acc"] == 1.0
    report = json.loads(out.read_text())
    assert report["mean_class_acc"] == 1.0
    assert out.with_suffix(".csv").exists()


def test_eval_model_writes_report(workdir, capsys):
    out = workdir / "eval.json"
    rc = run_cli("eval", "--checkpoint", str(workdir / "model.ckpt"),
                 "--dataset", str(workdir / "data"), "--out", str(out))
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["variant"] == "ch_full"
    assert 0.0 <= rep["mean_class_acc"] <= 1.0


def test_predict_emits_response(workdir, capsys):
    ds_index = (workdir / "data" / "index").read_text().splitlines()
    inst = json.loads(ds_index[1])
    rc = run_cli("predict", "--checkpoint", str(workdir / "model.ckpt"),
                 "--instance", str(inst["id"]), "--dataset", str(workdir / "data"),
                 "--x", "10", "--y", "12", "--kp", "left_front_wheel", "--obj", "car")
    assert rc == 0
    resp = json.loads(capsys.readouterr().out.strip())
    assert set(resp) >= {"probs", "bins", "angles_deg", "weight_map", "variant"}
    assert len(resp["probs"]["az"]) == 24
    assert abs(sum(resp["probs"]["az"]) - 1.0) < 1e-6


def test_predict_from_raw_image_file(workdir, capsys, tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (32, 32, 3)).astype("<f4")
    path = tmp_path / "img.bin"
    img.tofile(path)
    rc = run_cli("predict", "--checkpoint", str(workdir / "model.ckpt"),
                 "--image", str(path), "--x", "0", "--y", "31", "--kp", "4", "--obj", "0")
    assert rc == 0


def test_ablate_and_sweep(workdir, capsys):
    rc = run_cli("ablate", "--checkpoint", str(workdir / "model.ckpt"),
                 "--dataset", str(workdir / "data"), "--out", str(workdir / "abl.json"))
    assert rc == 0
    rows = json.loads((workdir / "abl.json").read_text())["rows"]
    assert len(rows) == 4
    rc = run_cli("sweep", "--checkpoint", str(workdir / "model.ckpt"),
                 "--dataset", str(workdir / "data"), "--sigmas", "0,4",
                 "--trials", "2", "--seed", "1", "--out", str(workdir / "sw.json"))
    assert rc == 0
    rows = json.loads((workdir / "sw.json").read_text())["rows"]
    assert [r["sigma_px"] for r in rows] == [0.0, 4.0]


def test_train_smoke_and_summary(workdir, capsys):
    cfg = workdir / "train_config.json"
    cfg.write_text(json.dumps({
        "model": {**{k: (list(v) if isinstance(v, tuple) else v) for k, v in TINY_MODEL.items()
                     if k != "kp_classes"},
                  "conv_specs": [list(c) for c in TINY_MODEL["conv_specs"]],
                  "attention_grid": list(TINY_MODEL["attention_grid"]),
                  "kp_classes": {k: list(v) for k, v in TINY_MODEL["kp_classes"].items()},
                  "variant": "ch_full"},
        "train": {"batch_size": 8, "eval_every": 5, "plateau_patience": 1,
                  "max_steps_stage1": 10, "val_cap": 20, "seed": 2},
    }))
    rc = run_cli("train", "--config", str(cfg), "--synth", str(workdir / "data"),
                 "--out", str(workdir / "run"))
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert (workdir / "run" / "checkpoint.ckpt").exists()
    assert (workdir / "run" / "train_log.jsonl").exists()
    assert 0.0 <= summary["best_val_acc"] <= 1.0


def test_config_errors_are_one_line_with_field_path(workdir, capsys):
    cfg = workdir / "bad.json"
    cfg.write_text(json.dumps({"data": {"renders_per_class": 0}}))
    rc = run_cli("gen-data", "--config", str(cfg), "--out", str(workdir / "x"))
    assert rc != 0
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ")
    assert "renders_per_class" in err
    assert "\n" not in err


def test_unknown_config_field_reports_path(workdir, capsys):
    cfg = workdir / "bad2.json"
    cfg.write_text(json.dumps({"data": {"render_count": 5}}))
    rc = run_cli("gen-data", "--config", str(cfg), "--out", str(workdir / "x"))
    assert rc != 0
    assert "data.render_count" in capsys.readouterr().err


def test_set_override_applies(workdir, capsys, tmp_path):
    cfg = workdir / "config.json"
    rc = run_cli("gen-data", "--config", str(cfg),
                 "--set", "data.renders_per_class=4", "--out", str(tmp_path / "d"))
    assert rc == 0
    header = json.loads((tmp_path / "d" / "index").read_text().splitlines()[0])
    assert header["config"]["renders_per_class"] == 4


def test_cli_via_subprocess_exit_codes(workdir):
    proc = subprocess.run(
        [sys.executable, "-m", "clickview.cli", "eval", "--checkpoint", "/nonexistent.ckpt",
         "--dataset", str(workdir / "data"), "--out", "/tmp/never.json"],
        capture_output=True, text=True)
    assert proc.returncode != 0
    assert proc.stderr.strip().startswith("error:")
    proc = subprocess.run([sys.executable, "-m", "clickview.cli", "config-schema"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "model.variant" in proc.stdout
