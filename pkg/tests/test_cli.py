import json
import os

import pytest

from crackscope.cli import UsageError, main, parse_config

THEORY = [
    "theory", "--fiber-length", "12", "--fiber-radius", "0.02", "--fiber-fraction", "0.02",
    "--matrix-fraction", "0.98", "--matrix-modulus", "20", "--matrix-failure-strain", "0.0002",
    "--bond-strength", "20", "--snubbing", "0",
]


def test_theory_zero_fiber(capsys):
    assert main(THEORY) == 0
    assert "g=0.5" in capsys.readouterr().out


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_config_parsing(tmp_path):
    assert parse_config("# comment\nseed = 4\n\nwindow=100  # trailing\n") == {"seed": 4, "window": 100}
    with pytest.raises(UsageError):
        parse_config("colour=red\n")
    with pytest.raises(UsageError):
        parse_config("seed=four\n")
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour=red\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_data_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n2 2\n255\n\x00")
    assert main(["tile", str(bad), "--out", str(tmp_path / "t")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("crackscope: data error:") and err.count("\n") == 1
    assert main(["stats", str(tmp_path / "missing.csv")]) == 2


def test_numeric_failure_exit(tmp_path):
    series = tmp_path / "s.csv"
    series.write_text(
        "frameIndex,strain,load_kN,crackNumberReal,crackNumberInt,acw_um,cd_per_m\n"
        "0,0.0,,0.0,0,,0.0\n1,0.01,,1.0,1,10.0,40.0\n"
    )
    assert main(["fit", str(series)]) in (2, 3)


def test_synth_tiles_split_train_predict(tmp_path):
    out = tmp_path / "tiles"
    assert main(["synth", "--tiles", "12", "--channels", "1", "--window", "32", "--out", str(out)]) == 0
    assert main(["split", str(out / "tiles.tsv"), "--out", str(tmp_path / "split")]) == 0
    model = tmp_path / "m.csm"
    assert main(["train-sfnn", str(tmp_path / "split" / "train.tsv"), "--epochs", "2", "--hidden", "8", "--out", str(model)]) == 0
    pred = tmp_path / "pred.tsv"
    assert main(["predict", str(out / "tiles.tsv"), "--classifier", "sfnn-bnw", "--model", str(model), "--window", "32", "--out", str(pred)]) == 0
    ev = tmp_path / "eval.json"
    assert main(["eval", str(pred), str(out / "tiles.tsv"), "--out", str(ev)]) == 0
    assert "accuracy" in json.loads(ev.read_text())


def test_synth_stats_fit_defaults(tmp_path, capsys):
    d = tmp_path / "run"
    assert main(["synth", "--out", str(d)]) == 0
    assert sorted(os.listdir(d))[:2] == ["frame_0000.ppm", "frame_0001.ppm"]
    series = tmp_path / "series.csv"
    assert main(["stats", str(d / "frames.csv"), "--out", str(series), "--pattern", str(tmp_path / "p.json")]) == 0
    capsys.readouterr()
    assert main(["fit", str(series)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["model"] == "trilinear" and doc["cd_max"] > 0
    # identical inputs give byte-identical outputs
    series2 = tmp_path / "series2.csv"
    assert main(["stats", str(d / "frames.csv"), "--out", str(series2), "--jobs", "2"]) == 0
    assert series.read_bytes() == series2.read_bytes()
