import csv
import os
import subprocess
import sys
from pathlib import Path

import pytest

from gtsa.cli import main
from gtsa.config import TrainConfig
from gtsa.data import synthetic_dataset
from gtsa.trainer import run_pretrain

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TINY = str(CONFIGS / "tiny.cfg")


@pytest.fixture(scope="module")
def run1(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "run1"
    assert main(["pretrain", "--synthetic", "8", "--config", TINY, "--out", str(out)]) == 0
    return out


class TestUsage:
    @pytest.mark.parametrize("argv", [
        [], ["frobnicate"], ["pretrain", "--config", TINY], ["synth", "--n", "2"],
        ["probe", "--ckpt", "x", "--synthetic", "2", "--family", "mixup", "--out", "r.csv"],
        ["gradcheck", "--bogus"], ["synth", "--n", "two", "--out", "x"],
    ])
    def test_exit_1(self, argv, capsys):
        assert main(argv) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "pretrain" in capsys.readouterr().out

    def test_semantic_usage_errors(self, tmp_path):
        assert main(["synth", "--n", "0", "--out", str(tmp_path)]) == 1
        assert main(["pretrain", "--synthetic", "0", "--config", TINY, "--out", str(tmp_path)]) == 1


class TestRuntimeErrors:
    def test_missing_checkpoint(self, tmp_path):
        assert main(["probe", "--ckpt", str(tmp_path / "no.gtsa"), "--synthetic", "2",
                     "--family", "color_jitter", "--out", str(tmp_path / "r.csv")]) == 2

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dim = 16\nlearning_rate = 0.1\n")
        assert main(["pretrain", "--synthetic", "2", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_undecodable_image(self, tmp_path, run1):
        bad = tmp_path / "x.png"
        bad.write_text("nope")
        assert main(["match", "--ckpt", str(run1 / "final.gtsa"), "--image", str(bad), "--k", "4",
                     "--out", str(tmp_path / "m")]) == 2


def test_synth_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--n", "3", "--size", "32", "--seed", "5", "--out", str(tmp_path / d)]) == 0
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == ["synth_00000.png", "synth_00001.png", "synth_00002.png"]
    assert all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)


class TestPretrain:
    def test_artifacts(self, run1):
        assert {"final.gtsa", "metrics.csv", "metrics.png"} <= set(os.listdir(run1))
        rows = list(csv.reader(open(run1 / "metrics.csv")))
        assert rows[0] == ["step", "loss_total", "loss_overlap", "loss_pc", "loss_rp", "momentum", "lr"]
        assert len(rows) == 3

    def test_byte_identical_rerun(self, tmp_path, run1):
        out = tmp_path / "run2"
        assert main(["pretrain", "--synthetic", "8", "--config", TINY, "--out", str(out)]) == 0
        for name in os.listdir(run1):
            assert (run1 / name).read_bytes() == (out / name).read_bytes(), name

    def test_logs_config_and_seed(self, tmp_path, caplog):
        caplog.set_level("INFO", logger="gtsa")
        assert main(["pretrain", "--synthetic", "4", "--config", TINY, "--out", str(tmp_path)]) == 0
        assert "seed 0" in caplog.text and "dim = 16" in caplog.text

    def test_from_directory(self, tmp_path):
        assert main(["synth", "--n", "4", "--size", "40", "--out", str(tmp_path / "imgs")]) == 0
        assert main(["pretrain", "--data", str(tmp_path / "imgs"), "--config", TINY,
                     "--out", str(tmp_path / "run")]) == 0
        assert len(list(csv.reader(open(tmp_path / "run" / "metrics.csv")))) == 2

    def test_resume(self, tmp_path):
        cfg = tmp_path / "two.cfg"
        cfg.write_text(Path(TINY).read_text().replace("epochs = 1", "epochs = 2"))
        assert main(["pretrain", "--synthetic", "8", "--config", str(cfg), "--out", str(tmp_path / "full")]) == 0
        part = tmp_path / "part"
        run_pretrain(TrainConfig.load(cfg), synthetic_dataset(8, 32), part, stop_after_epochs=1)
        assert main(["pretrain", "--synthetic", "8", "--config", str(cfg), "--out", str(part),
                     "--resume", str(part / "final.gtsa")]) == 0
        for name in ("metrics.csv", "final.gtsa"):
            assert (part / name).read_bytes() == (tmp_path / "full" / name).read_bytes()


class TestProbe:
    def test_color_jitter_row(self, tmp_path, run1):
        out = tmp_path / "r.csv"
        assert main(["probe", "--ckpt", str(run1 / "final.gtsa"), "--synthetic", "3",
                     "--family", "color_jitter", "--out", str(out)]) == 0
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["family", "mean_variance", "n_views", "n_images"]
        assert rows[1][0] == "color_jitter" and float(rows[1][1]) >= 0
        assert (tmp_path / "r.png").exists()

    def test_all_disabled(self, tmp_path, run1):
        out = tmp_path / "r.csv"
        assert main(["probe", "--ckpt", str(run1 / "final.gtsa"), "--synthetic", "2", "--family", "all",
                     "--disable-transforms", "--out", str(out)]) == 0
        rows = list(csv.reader(open(out)))[1:]
        assert [r[0] for r in rows] == ["color_jitter", "four_fold_rotation", "crop_multicrop"]
        assert all(float(r[1]) == 0.0 for r in rows)


def test_match(tmp_path, run1):
    assert main(["synth", "--n", "1", "--size", "32", "--out", str(tmp_path)]) == 0
    prefix = tmp_path / "pairs"
    assert main(["match", "--ckpt", str(run1 / "final.gtsa"), "--image", str(tmp_path / "synth_00000.png"),
                 "--k", "5", "--out", str(prefix)]) == 0
    rows = list(csv.reader(open(str(prefix) + ".csv")))
    assert rows[0] == ["sx", "sy", "tx", "ty", "sim"] and len(rows) == 6
    assert os.path.getsize(str(prefix) + ".png") > 0
    assert main(["match", "--ckpt", str(run1 / "final.gtsa"), "--image", str(tmp_path / "synth_00000.png"),
                 "--k", "0", "--out", str(prefix)]) == 1


@pytest.mark.slow
def test_gradcheck_default(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "encoder.patch_embed.weight" in out
    assert all(line.endswith("ok") for line in out.splitlines() if "max_rel_err" in line)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gtsa", "synth", "--n", "1", "--size", "32",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "seed=0" in r.stderr
    r = subprocess.run([sys.executable, "-m", "gtsa", "nope"], capture_output=True, text=True)
    assert r.returncode == 1
