import csv

import pytest

from temporal_eenn.cli import main, parse_config
from temporal_eenn.model_io import load_model
from temporal_eenn.stream_gen import load_stream

SMALL = """\
# small benchmark for quick checks
stream_length = 300
seed = 5
noise_sigma = 0.1
drift_rate = 0.001
mean_scene_length = 20
policy = temporal_patience
threshold = 0.25
thresholds = 0.05, 0.3
confidence_thresholds = 0.9, 0.9
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return str(p)


def test_parse_config_types():
    rc = parse_config(SMALL + "frame_shape = 4, 8, 8, 3\nworkers = 3\n")
    assert rc.stream.stream_length == 300 and rc.stream.frame_shape == (4, 8, 8, 3)
    assert rc.policy == "temporal_patience" and rc.threshold == 0.25
    assert rc.thresholds == [0.05, 0.3] and rc.confidence_thresholds == (0.9, 0.9)
    assert rc.workers == 3 and rc.model_seed is None


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        parse_config("speed = 3\n")


def test_generate_files(cfg, tmp_path):
    m, s = tmp_path / "m.bin", tmp_path / "s.bin"
    assert main(["gen-model", "--config", cfg, "--out", str(m)]) == 0
    assert main(["gen-stream", "--config", cfg, "--out", str(s)]) == 0
    assert load_model(m).n_exits == 3
    assert len(load_stream(s)) == 300


def test_run_sweep_compare(cfg, tmp_path):
    m, s = tmp_path / "m.bin", tmp_path / "s.bin"
    main(["gen-model", "--config", cfg, "--out", str(m)])
    main(["gen-stream", "--config", cfg, "--out", str(s)])

    run_a, run_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", cfg, "--out", str(run_a)]) == 0
    assert main(["run", "--config", cfg, "--model", str(m), "--stream", str(s),
                 "--out", str(run_b)]) == 0
    # files regenerate exactly what the config describes
    assert run_a.read_bytes() == run_b.read_bytes()
    row = next(csv.DictReader(run_a.open()))
    assert row["policy"] == "temporal_patience" and row["threshold"] == "0.25"

    sw = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", cfg, "--out", str(sw), "--workers", "2"]) == 0
    kinds = [r["policy"] for r in csv.DictReader(sw.open())]
    assert kinds == ["difference_detection"] * 2 + ["temporal_patience"] * 2 + ["single_exit", "confidence"]

    lab = tmp_path / "lab.csv"
    assert main(["compare-labeling", "--config", cfg, "--out", str(lab)]) == 0
    row = next(csv.DictReader(lab.open()))
    assert row["confidence_thresholds"] == "0.9 0.9"
    assert 0 <= float(row["vote_accuracy"]) <= 1


def test_seed_flag_overrides_config(cfg, tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    main(["gen-stream", "--config", cfg, "--out", str(a)])
    main(["gen-stream", "--config", cfg, "--seed", "6", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


@pytest.mark.parametrize("body", ["stream_length = -4\n", "nonsense line\n", "policy = entropy\n",
                                  "speed = 1\n", "threshold = abc\n"])
def test_bad_config_nonzero_exit(tmp_path, capsys, body):
    p = tmp_path / "bad.cfg"
    p.write_text(body)
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "x.csv")]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_files_nonzero_exit(cfg, tmp_path, capsys):
    assert main(["run", "--config", cfg, "--model", str(tmp_path / "none.bin"),
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert main(["sweep", "--config", cfg, "--workers", "0", "--out", str(tmp_path / "x.csv")]) == 1
    capsys.readouterr()
