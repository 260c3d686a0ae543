import json
import subprocess
import sys

import numpy as np
import pytest

from rangesam import cli
from rangesam.autodiff import functional as F
from rangesam.kitti import PointCloud, write_scan
from rangesam.viz import read_ppm

MICRO = ["--set", "projection.width=64", "--set", "model.input_hw=[16, 64]", "--set", "model.stem_channels=8",
         "--set", "model.stage_channels=[8, 16, 32, 64]", "--set", "model.decoder_channels=16",
         "--set", "data.synthetic_size=2", "--set", "data.batch_size=2"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_project_single_point(tmp_path, capsys):
    scan = tmp_path / "one.bin"
    write_scan(scan, PointCloud(np.array([[10.0, 0.0, -1.0]]), np.array([0.4])))
    code, out, err = run(capsys, "project", str(scan), "--toy", "--out", str(tmp_path / "p"))
    assert code == 0
    img = read_ppm(tmp_path / "p_range.ppm")
    assert img.shape == (16, 256, 3)
    assert np.count_nonzero(img.any(axis=2)) == 1
    stats = json.loads(out)
    assert stats["valid_pixels"] == 1 and stats["points"] == 1
    assert not (tmp_path / "p_labels.ppm").exists()
    raw = np.load(tmp_path / "p_raster.npz")
    assert raw["channels"].shape == (6, 16, 256)
    assert "wrote" in err and "wrote" not in out


def test_project_empty_cloud(tmp_path, capsys):
    scan = tmp_path / "empty.bin"
    write_scan(scan, PointCloud(np.zeros((0, 3)), np.zeros(0)))
    code, out, _ = run(capsys, "project", str(scan), "--toy", "--out", str(tmp_path / "e"))
    assert code == 0 and json.loads(out)["occupancy"] == 0.0
    assert not read_ppm(tmp_path / "e_range.ppm").any()


def test_project_synthetic_with_labels(tmp_path, capsys):
    code, out, _ = run(capsys, "project", "synthetic", "--toy", "--out", str(tmp_path / "s"))
    assert code == 0
    assert 0 < json.loads(out)["occupancy"] <= 1
    assert read_ppm(tmp_path / "s_labels.ppm").shape == (16, 256, 3)


def test_missing_scan_exits_nonzero(tmp_path, capsys):
    code, out, err = run(capsys, "project", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "x"))
    assert code != 0 and out == ""
    assert "nope.bin" in err


def test_truncated_scan_reports_path(tmp_path, capsys):
    scan = tmp_path / "bad.bin"
    scan.write_bytes(b"\0" * 10)
    code, out, err = run(capsys, "project", str(scan), "--out", str(tmp_path / "x"))
    assert code != 0 and "bad.bin" in err and out == ""


def test_config_error_has_line(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("seed: 1\nmodel:\n  decoder_chanels: 3\n")
    code, out, err = run(capsys, "stats", "--config", str(cfg))
    assert code != 0 and out == ""
    assert f"{cfg}:3: unknown field 'model.decoder_chanels'" in err


def test_stats_reports_parameters(capsys):
    code, out, _ = run(capsys, "stats", "--toy")
    assert code == 0
    assert "total" in out and "INCONSISTENT" in out


def test_gradcheck_passes_and_prints_every_op(capsys):
    code, out, err = run(capsys, "gradcheck", "--skip-model")
    assert code == 0, out
    for op in ("gelu", "layer_norm", "masked_mha", "conv2d_depthwise", "upsample_bilinear", "total_loss"):
        assert op in out
    assert "FAIL" not in out and "dtype=float64" in err


def test_gradcheck_catches_corrupted_gelu(capsys, monkeypatch):
    monkeypatch.setattr(F, "gelu_grad", lambda d, t: 1.1 * (0.5 * (1.0 + t)))
    code, out, err = run(capsys, "gradcheck", "--skip-model")
    assert code != 0
    gelu_row = next(line for line in out.splitlines() if line.startswith("gelu "))
    assert gelu_row.endswith("FAIL")
    assert "gelu" in err


def test_gradcheck_float32_flag(capsys):
    code, _, err = run(capsys, "gradcheck", "--skip-model", "--float32")
    assert "dtype=float32" in err


def test_train_then_eval(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, _, err = run(capsys, "train", "--toy", "--synthetic", *MICRO, "--set", "schedule.epochs=1",
                       "--out", str(out_dir))
    assert code == 0, err
    assert (out_dir / "last.ckpt").exists() and (out_dir / "config.yaml").exists()
    assert "step" in err
    metrics = tmp_path / "m.json"
    code, out, err = run(capsys, "eval", "--checkpoint", str(out_dir / "last.ckpt"), "--metrics", str(metrics))
    assert code == 0, err
    header = out.splitlines()[0].split("|")
    assert len(header) == 1 + 19 + 1
    data = json.loads(metrics.read_text())
    assert 0.0 <= data["miou"] <= 1.0


def test_eval_ground_truth_round_trip(capsys):
    code, out, _ = run(capsys, "eval", "--toy", "--synthetic", "--predictor", "gt", "--k", "1", "--limit", "3")
    assert code == 0
    assert out.splitlines()[-1].rstrip().endswith("100.0")


def test_eval_incompatible_checkpoint(tmp_path, capsys):
    out_dir = tmp_path / "run"
    run(capsys, "train", "--toy", "--synthetic", *MICRO, "--set", "schedule.epochs=1", "--out", str(out_dir),
        "--quiet")
    code, out, err = run(capsys, "eval", "--checkpoint", str(out_dir / "last.ckpt"), "--toy", "--synthetic")
    assert code != 0 and "incompatible" in err and out == ""


def test_resume_continues(tmp_path, capsys):
    out_dir = tmp_path / "run"
    args = ["train", "--toy", "--synthetic", *MICRO, "--set", "schedule.epochs=2", "--quiet"]
    assert run(capsys, *args, "--out", str(out_dir), "--max-steps", "1")[0] == 0
    code, _, err = run(capsys, *args, "--out", str(out_dir), "--resume", str(out_dir / "epoch001.ckpt"))
    assert code == 0 and "resumed" in err and "done at step 2" in err


def test_module_entry_point_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rangesam.cli", "stats", "--set", "nonsense"],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert proc.stdout == "" and "expected dot.path=value" in proc.stderr


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2
