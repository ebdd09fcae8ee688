"""End-to-end CLI runs on a narrow network so the whole file stays quick."""

import os
import sys

import pytest

from xmexp import cli
from xmexp.config import parse_config
from xmexp.kernel import Dense
from xmexp.trainer import read_eval_report, read_step_reports, run_strategy1

SMALL = """
seed = 3
synth.samples_per_identity = 6
channel.latent_dim = 8
channel.visual_filters = 4,4,4
channel.auditory_filters = 4,4,4
som.rows = 4
som.cols = 4
som.epochs = 10
train.epochs = 1
novel.identity = id03
"""


@pytest.fixture
def small_cfg(tmp_path, monkeypatch):
    for k in list(os.environ):
        if k.startswith("XMEXP_"):
            monkeypatch.delenv(k)
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def trained(tmp_path, small_cfg):
    out = tmp_path / "run"
    assert run("train", "--config", small_cfg, "--out", out) == 0
    return out


def test_train_outputs(trained):
    assert (trained / "checkpoint.bin").stat().st_size > 0
    reports = read_step_reports(trained / "train_steps.csv")
    # 3 identities x 6 samples; round(4.2) = 4 train samples each -> 12 steps for one epoch
    assert [r.step for r in reports] == list(range(1, 13))
    assert all(r.visual_loss is not None and r.auditory_loss is not None for r in reports)
    assert "novel.identity = id03" in (trained / "config.txt").read_text()


def test_train_deterministic(tmp_path, small_cfg, trained):
    again = tmp_path / "again"
    assert run("train", "--config", small_cfg, "--out", again) == 0
    for name in ("checkpoint.bin", "train_steps.csv"):
        assert (again / name).read_bytes() == (trained / name).read_bytes()


def test_seed_flag_changes_run(tmp_path, small_cfg, trained):
    other = tmp_path / "other"
    assert run("train", "--config", small_cfg, "--out", other, "--seed", 4) == 0
    assert (other / "checkpoint.bin").read_bytes() != (trained / "checkpoint.bin").read_bytes()


def test_eval_matches_in_process(trained, small_cfg, capsys):
    capsys.readouterr()
    assert run("eval", "--config", small_cfg, "--out", trained) == 0
    printed = capsys.readouterr().out
    assert printed == (trained / "eval.csv").read_text()
    report = read_eval_report(trained / "eval.csv")
    cfg = parse_config(SMALL)
    pairs = [p for p in cli.load_pairs(cfg) if p.identity != "id03"]
    direct = run_strategy1(pairs, cfg.model(), [3], cfg["train.split"], cfg["train.epochs"])
    for cond, acc in direct.accuracy.items():
        assert report.accuracy[cond] == pytest.approx(acc, abs=1e-9)


def test_eval_dim_mismatch(trained, small_cfg, tmp_path, capsys):
    cfg = tmp_path / "wide.cfg"
    cfg.write_text(SMALL.replace("latent_dim = 8", "latent_dim = 6"))
    assert run("eval", "--config", cfg, "--out", trained) == 2
    assert "does not match" in capsys.readouterr().err


def test_eval_missing_checkpoint(small_cfg, tmp_path, capsys):
    assert run("eval", "--config", small_cfg, "--out", tmp_path / "empty") == 3
    assert "checkpoint not found" in capsys.readouterr().err


def test_novel_six_rows_and_deterministic(trained, small_cfg, capsys):
    assert run("novel", "--config", small_cfg, "--out", trained) == 0
    first = (trained / "novel_curve.csv").read_bytes()
    reports = read_step_reports(trained / "novel_curve.csv")
    assert [r.step for r in reports] == list(range(1, 7))
    assert run("novel", "--config", small_cfg, "--out", trained) == 0
    assert (trained / "novel_curve.csv").read_bytes() == first


def test_novel_overlap_rejected(trained, tmp_path, capsys):
    cfg = tmp_path / "overlap.cfg"
    cfg.write_text(SMALL.replace("novel.identity = id03", "novel.identity = id00"))
    assert run("novel", "--config", cfg, "--out", trained, "--checkpoint", trained / "checkpoint.bin") == 2
    assert "id00" in capsys.readouterr().err


def test_manifest_required(tmp_path, capsys):
    cfg = tmp_path / "real.cfg"
    cfg.write_text("data.synthetic = false\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "data.manifest" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("som.bogus = 1\n")
    assert run("train", "--config", cfg) == 2
    assert "som.bogus" in capsys.readouterr().err


def test_synth_then_train_from_manifest(tmp_path, small_cfg):
    data = tmp_path / "data"
    assert run("synth", "--config", small_cfg, "--out", data) == 0
    assert len((data / "manifest.csv").read_text().splitlines()) == 25
    cfg = tmp_path / "manifest.cfg"
    cfg.write_text(SMALL + f"data.synthetic = false\ndata.manifest = {data / 'manifest.csv'}\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "m") == 0


def test_bad_manifest_row_exit_3(tmp_path, small_cfg, capsys):
    manifest = tmp_path / "m.csv"
    manifest.write_text("id00,nope.ppm\n")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL + f"data.synthetic = false\ndata.manifest = {manifest}\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 3
    assert "m.csv:1" in capsys.readouterr().err


@pytest.mark.skipif(sys.platform == "win32" or os.geteuid() == 0, reason="root ignores directory modes")
def test_unwritable_output_exit_3(tmp_path, small_cfg):
    locked = tmp_path / "locked"
    locked.mkdir(mode=0o500)
    assert run("synth", "--config", small_cfg, "--out", locked / "sub") == 3


def test_output_path_is_a_file_exit_3(tmp_path, small_cfg, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("synth", "--config", small_cfg, "--out", blocker / "sub") == 3
    assert "io error" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert run("gradcheck") == 0
    lines = capsys.readouterr().out.splitlines()
    names = [l.split()[0] for l in lines[:-1]]
    assert len(names) == len(set(names))
    assert lines[-1].startswith("gradcheck passed")


def test_gradcheck_catches_doubled_gradient(monkeypatch, capsys):
    original = Dense.backward

    def doubled(self, cache, dy):
        before = self.weight.grad.copy() if self.weight.grad is not None else 0.0
        dx = original(self, cache, dy)
        self.weight.grad = before + 2 * (self.weight.grad - before)
        return dx

    monkeypatch.setattr(Dense, "backward", doubled)
    assert run("gradcheck") == 1
    last = capsys.readouterr().out.splitlines()[-1]
    assert last.startswith("gradcheck FAILED") and "dense" in last and "weight" in last
