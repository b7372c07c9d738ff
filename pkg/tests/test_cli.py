import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from pcqa import cli
from pcqa.pointcloud import PointCloud, write_ply


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def cube_ply(tmp_path, rng):
    p = rng.uniform(-1, 1, (400, 3))
    path = tmp_path / "cube.ply"
    write_ply(PointCloud(p, np.full((400, 3), 90, dtype=np.uint8), "cube"), path)
    return path


def test_features_row(capsys, cube_ply):
    code, out, _ = _run(capsys, "features", "--input", str(cube_ply), "--scales", "10,20")
    assert code == 0
    row = out.strip().split(",")
    assert row[0] == "cube" and len(row) == 13
    assert all(np.isfinite(float(v)) for v in row[1:])
    code, out, _ = _run(capsys, "features", "--input", str(cube_ply), "--header")
    assert out.splitlines()[0].startswith("name,")


def test_metrics_identical_columns(capsys, tmp_path):
    (tmp_path / "p.csv").write_text("name,value\n" + "".join(f"c{i},{i * 1.5}\n" for i in range(10)))
    code, out, _ = _run(capsys, "metrics", "--pred", str(tmp_path / "p.csv"), "--mos", str(tmp_path / "p.csv"))
    assert code == 0
    r = next(csv.DictReader(io.StringIO(out)))
    assert float(r["srcc"]) == 1.0 and float(r["rmse"]) == 0.0 and r["n"] == "10"


def test_project_writes_six(capsys, cube_ply, tmp_path):
    code, out, _ = _run(capsys, "project", "--input", str(cube_ply), "--out", str(tmp_path / "png"),
                        "--resolution", "64", "--size", "96")
    assert code == 0 and len(out.split()) == 6
    assert len(list((tmp_path / "png").glob("*.png"))) == 6


def test_score_mock(capsys):
    code, out, _ = _run(capsys, "score", "--mock", "--name", "x", "--mos", "70", "--sigma", "0")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "name,p_bad,p_poor,p_fair,p_good,p_excellent"
    probs = [float(v) for v in lines[1].split(",")[1:]]
    assert abs(sum(probs) - 1) < 1e-9 and int(np.argmax(probs)) == 3


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["features"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "usage:" in err and err.strip().splitlines()[-1].startswith("error: UsageError:")


def test_runtime_error_single_line(capsys, tmp_path):
    (tmp_path / "bad.ply").write_text("not a ply\n")
    code, out, err = _run(capsys, "features", "--input", str(tmp_path / "bad.ply"))
    assert code == 1 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: MalformedHeader:")


def test_train_predict_export_and_evaluate(capsys, small_benchmark, tmp_path):
    feats = tmp_path / "f.csv"
    rows = []
    from pcqa.manifest import load_manifest
    manifest = load_manifest(small_benchmark)
    for e in manifest.entries[:12]:
        code, out, _ = _run(capsys, "features", "--input", str(e.ply_path))
        rows.append(out)
    code, header, _ = _run(capsys, "features", "--input", str(manifest.entries[0].ply_path), "--header")
    feats.write_text(header.splitlines()[0] + "\n" + "".join(rows))
    code, out, _ = _run(capsys, "train", "--features", str(feats), "--manifest", str(small_benchmark),
                        "--out", str(tmp_path / "m.json"))
    assert code == 0 and json.loads(out)["samples"] == 12
    code, out, _ = _run(capsys, "predict", "--model", str(tmp_path / "m.json"), "--features", str(feats))
    assert code == 0 and len(out.splitlines()) == 13

    from builders import fake_projections
    fake_projections(manifest, tmp_path / "img")
    code, out, _ = _run(capsys, "export-sft", "--manifest", str(small_benchmark), "--fold", "0", "--folds", "5",
                        "--images", str(tmp_path / "img"), "--out", str(tmp_path / "sft.jsonl"))
    assert code == 0 and int(out) == 40

    (tmp_path / "exp.toml").write_text(
        f'manifest = "{small_benchmark}"\noutput_dir = "run"\nfolds = 5\nrender_projections = false\n'
        '[evaluator.mock]\nseed = 0\nsigma = 0.05\n')
    code, out, _ = _run(capsys, "evaluate", "--config", str(tmp_path / "exp.toml"))
    assert code == 0 and out.count("fold ") == 5 and "mean:" in out
    assert (tmp_path / "run" / "metrics.csv").is_file() and (tmp_path / "run" / "predictions.csv").is_file()


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "pcqa.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("pcqa ")
