import hashlib
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from changetitans import cli
from changetitans.metrics import CSV_COLUMNS, CSV_VERSION
from changetitans.pipeline import data as D
from changetitans.tensor import io as tio


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_twice_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.run(["--seed", "7", "synth", "--out", str(tmp_path / name), "--n", "4"]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert len(list((tmp_path / "a" / "A").iterdir())) == 4


def test_eval_identical_dirs(tmp_path, capsys):
    cli.run(["synth", "--out", str(tmp_path / "d"), "--n", "3"])
    label = str(tmp_path / "d" / "label")
    assert cli.run(["eval", "--pred", label, "--gt", label, "--out", str(tmp_path / "m")]) == 0
    lines = (tmp_path / "m" / "metrics.csv").read_text().splitlines()
    assert lines[0] == f"# {CSV_VERSION}"
    assert lines[1] == ",".join(CSV_COLUMNS)
    for row in lines[2:]:
        vals = dict(zip(CSV_COLUMNS, row.split(",")))
        for k in ("precision", "recall", "f1", "iou", "bf1", "trimap_miou"):
            assert float(vals[k]) == 1.0
        assert float(vals["hausdorff"]) == 0.0
    assert "f1=1.0" in (tmp_path / "m" / "report.txt").read_text()


def test_csv_header_golden():
    golden = Path(__file__).parent / "golden" / "metrics_header.csv"
    assert golden.read_text().splitlines() == [f"# {CSV_VERSION}", ",".join(CSV_COLUMNS)]


def test_train_infer_roundtrip(tmp_path):
    data, out = tmp_path / "d", tmp_path / "run"
    cli.run(["synth", "--out", str(data), "--n", "2"])
    cfg = tmp_path / "c.txt"
    cfg.write_text("steps = 2\nbatch_size = 2\nlog_every = 1\n")
    assert cli.run(["--seed", "1", "train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    loss = (out / "loss.csv").read_text().splitlines()
    assert loss[0].startswith("# ") and loss[1] == "step,loss,grad_norm" and len(loss) == 4
    a, b = data / "A" / "synth00000.ppm", data / "B" / "synth00000.ppm"
    assert cli.run(["infer", "--checkpoint", str(out / "checkpoint"), "--pair", str(a), str(b),
                    "--out", str(tmp_path / "pred")]) == 0
    mask = D.read_mask(tmp_path / "pred" / "synth00000.pgm")
    prob = tio.load(tmp_path / "pred" / "synth00000_prob.tcdt")
    assert mask.shape == prob.shape == (32, 32)
    np.testing.assert_array_equal(mask, (prob > 0.5).astype(np.uint8))
    assert cli.run(["infer", "--checkpoint", str(out / "checkpoint"), "--data", str(data),
                    "--out", str(tmp_path / "pred2")]) == 0
    assert len(list((tmp_path / "pred2").glob("*.pgm"))) == 2


def test_ablate_writes_table(tmp_path):
    assert cli.run(["ablate", "--out", str(tmp_path), "--steps", "1", "--variants", "sum", "siam_diff"]) == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[1].startswith("fusion,") and [l.split(",")[0] for l in lines[2:]] == ["sum", "siam_diff"]


def test_gradcheck_exit_zero(capsys):
    assert cli.run(["gradcheck", "--max-elements", "3"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["eval", "--pred", "/nonexistent", "--gt", "/nonexistent", "--out", "x"],
    ["train", "--data", "/nonexistent", "--out", "x"],
])
def test_bad_arguments_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.run(argv) == 2


def test_bad_config_exit_2(tmp_path):
    cli.run(["synth", "--out", str(tmp_path / "d"), "--n", "1"])
    cfg = tmp_path / "c.txt"
    cfg.write_text("fusion_module = hadamard\n")
    assert cli.run(["train", "--config", str(cfg), "--data", str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 2


def test_bad_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("TCD_THREADS", "zero")
    assert cli.run(["synth", "--out", str(tmp_path / "d"), "--n", "1"]) == 2


def test_numeric_failure_exit_3(tmp_path, monkeypatch):
    cli.run(["synth", "--out", str(tmp_path / "d"), "--n", "1"])
    from changetitans.nn import NumericError

    def boom(*a, **k):
        raise NumericError("non-finite output from module decoder")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.run(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "changetitans", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout
