import csv
import json

import numpy as np

from mvq.cli import main
from mvq.dynamics import load_checkpoint
from mvq.pipeline import read_features, read_metrics


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_end_to_end(tmp_path, capsys):
    v, f = tmp_path / "v.mvq", tmp_path / "f.mvf"
    code, out, _ = _run(["synth", "--seed", "2", "--frames", "8", "--width", "12", "--height", "12",
                         "--out", str(v), "--flow-out", str(f)], capsys)
    assert code == 0 and "8 frames" in out
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "layers": [
        {"n": 3, "k": 3, "lambda_M": 1e-6, "activation_frames": 20},
        {"n": 2, "k": 3, "activation_frames": 10}]}))
    code, _, _ = _run(["train", "--config", str(cfg), "--video", str(v), "--out-dir", str(tmp_path / "a"),
                       "--flow", f"file:{f}"], capsys)
    assert code == 0
    state, dims = load_checkpoint(tmp_path / "a" / "layer1.mvqs")
    assert dims == (3, 1, 3)
    assert len(read_metrics(tmp_path / "a" / "metrics.csv")) == 20

    code, _, _ = _run(["run-multilayer", "--config", str(cfg), "--video", str(v),
                       "--out-dir", str(tmp_path / "b")], capsys)
    assert code == 0
    assert load_checkpoint(tmp_path / "b" / "layer2.mvqs")[1] == (2, 3, 3)
    feat = tmp_path / "x.mvqf"
    code, _, _ = _run(["export-features", "--video", str(v), "--checkpoints",
                       str(tmp_path / "b" / "layer1.mvqs"), str(tmp_path / "b" / "layer2.mvqs"),
                       "--out", str(feat)], capsys)
    assert code == 0
    arr = read_features(feat)
    assert arr.shape == (8, 12, 12, 5)
    np.testing.assert_allclose(arr[..., :3].sum(-1), 1, atol=1e-6)


def test_analyze_stability_json(capsys):
    code, out, _ = _run(["analyze-stability", "--json"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["class"] == "stable-real" and d["certified"]
    code, out, _ = _run(["analyze-stability", "--nu", "3e-8", "--json"], capsys)
    assert json.loads(out)["class"] == "unstable-real"


def test_mollifier_check_writes_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code, _, _ = _run(["mollifier-check", "--m", "1", "--sigmas", "1,0.1,0.01", "--out", str(out)], capsys)
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3
    assert all(abs(float(r["mass"]) - 1) < 1e-8 for r in rows)


def test_errors_are_reported(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "layers": [{"n": 3, "oops": 1}]}))
    (tmp_path / "v.mvq").write_bytes(b"MVQ1")
    code, _, err = _run(["train", "--config", str(cfg), "--video", str(tmp_path / "v.mvq"),
                         "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 1 and "oops" in err
    cfg.write_text(json.dumps({"version": 1, "layers": [{"n": 3}]}))
    code, _, err = _run(["train", "--config", str(cfg), "--video", str(tmp_path / "v.mvq"),
                         "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 1 and "header truncated" in err


def test_no_command_prints_help(capsys):
    assert main([]) == 2
