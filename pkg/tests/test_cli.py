import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from gmixseq import checkpoint, corpus
from gmixseq.cli import main

SMALL_MODEL = "model_dim = 16\nn_heads = 2\nff_dim = 32\nd_z = 4\nd_w = 4\nenc_layers = 1\nmap_layers = 1\ndec_layers = 1\n"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.cfg").write_text(SMALL_MODEL)
    assert main(["gen-data", "--kind", "emotion", "--k", "3", "--n", "4", "--t", "10", "--coeff-dim", "6",
                 "--audio-dim", "4", "--seed", "3", "--out", str(d / "emo.gmxd")]) == 0
    assert main(["train", "--data", str(d / "emo.gmxd"), "--config", str(d / "small.cfg"), "--epochs", "50",
                 "--lr", "3e-3", "--batch-size", "6", "--save-every", "20", "--seed", "1",
                 "--out", str(d / "m.ckpt")]) == 0
    return d


def test_gen_data_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "gen-data", "--kind", "motion", "--n", "3", "--speakers", "2", "--seed", "4",
                           "--out", tmp_path / f"{name}.gmxd")
        assert code == 0 and "sequences=6" in out
    assert (tmp_path / "a.gmxd").read_bytes() == (tmp_path / "b.gmxd").read_bytes()


def test_gen_data_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GMIXSEQ_SEED", "4")
    run(capsys, "gen-data", "--kind", "motion", "--n", "3", "--out", tmp_path / "env.gmxd")
    run(capsys, "gen-data", "--kind", "motion", "--n", "3", "--seed", "4", "--out", tmp_path / "flag.gmxd")
    assert (tmp_path / "env.gmxd").read_bytes() == (tmp_path / "flag.gmxd").read_bytes()


def test_usage_errors_exit_2_with_one_line(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--kind", "emotion", "--k", "1", "--n", "3", "--out", tmp_path / "x")
    assert code == 2
    assert err.count("\n") == 1 and err.startswith("error: usage:")


def test_missing_inputs_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "inspect-checkpoint", tmp_path / "nope.ckpt")
    assert code == 1 and err.startswith("error: FileNotFoundError:")
    code, _, err = run(capsys, "train", "--data", tmp_path / "nope.gmxd", "--out", tmp_path / "m.ckpt")
    assert code == 1 and err.count("\n") == 1


def test_corrupt_checkpoint_exits_1(tmp_path, capsys, workdir):
    buf = (workdir / "m.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(buf[:-10])
    code, _, err = run(capsys, "inspect-checkpoint", tmp_path / "bad.ckpt")
    assert code == 1 and "CheckpointError" in err


def test_train_writes_log_and_learns(workdir):
    rows = list(csv.DictReader((workdir / "m.csv").open()))
    assert list(rows[0]) == ["epoch", "total", "rec", "cond", "w", "emo"]
    assert len(rows) == 50
    assert float(rows[-1]["rec"]) < float(rows[0]["rec"])
    info = checkpoint.inspect(workdir / "m.ckpt")
    assert info["has_optimizer"] and info["config"]["model_dim"] == 16


def test_train_k_mismatch_is_usage_error(workdir, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", workdir / "emo.gmxd", "--k", "2", "--epochs", "1",
                       "--out", tmp_path / "m.ckpt")
    assert code == 2 and "K=3" in err


def test_unknown_config_key_is_usage_error(workdir, tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("flux_capacitor = 1\n")
    code, _, err = run(capsys, "train", "--data", workdir / "emo.gmxd", "--config", tmp_path / "bad.cfg",
                       "--out", tmp_path / "m.ckpt")
    assert code == 2 and "flux_capacitor" in err


def test_sample_and_interpolate_endpoints_agree(workdir, tmp_path, capsys):
    ckpt, data = workdir / "m.ckpt", workdir / "emo.gmxd"
    for e in (0, 2):
        assert run(capsys, "sample", "--checkpoint", ckpt, "--data", data, "--emotion", e, "--seed", 9,
                   "--out", tmp_path / f"s{e}.gmxd")[0] == 0
    code, out, _ = run(capsys, "interpolate", "--checkpoint", ckpt, "--data", data, "--e1", 0, "--e2", 2,
                       "--seed", 9, "--out", tmp_path / "path.gmxd")
    assert code == 0 and "E-PPL=" in out
    path = corpus.load(tmp_path / "path.gmxd").sequences
    assert len(path) == 11
    # alpha = 0 is pure e2, alpha = 1 is pure e1
    assert np.array_equal(path[0].coeffs, corpus.load(tmp_path / "s2.gmxd").sequences[0].coeffs)
    assert np.array_equal(path[-1].coeffs, corpus.load(tmp_path / "s0.gmxd").sequences[0].coeffs)
    rows = list(csv.DictReader((tmp_path / "path.csv").open()))
    assert list(rows[0]) == ["alpha", "p_e1", "p_e2", "e_ppl"]
    assert math.isnan(float(rows[0]["e_ppl"])) and float(rows[-1]["e_ppl"]) >= 0


def test_interpolate_rejects_bad_grid(workdir, tmp_path, capsys):
    code, _, _ = run(capsys, "interpolate", "--checkpoint", workdir / "m.ckpt", "--data", workdir / "emo.gmxd",
                     "--e1", 0, "--e2", 1, "--alphas", "0,0.5,0.2", "--out", tmp_path / "p.gmxd")
    assert code == 2


def test_eval_metrics(workdir, tmp_path, capsys):
    data = workdir / "emo.gmxd"
    code, out, _ = run(capsys, "eval", "--pred", data, "--gt", data, "--metric", "pcm", "--metric", "div",
                       "--out", tmp_path / "r.txt")
    assert code == 0
    assert (tmp_path / "r.txt").read_text() == out
    assert "pcm" in out and "1.0" in out
    one = tmp_path / "one.gmxd"
    corpus.save(corpus.load(data).subset([0]), one)
    assert run(capsys, "eval", "--pred", one, "--metric", "div")[0] == 2
    assert run(capsys, "eval", "--pred", one, "--metric", "pcm")[0] == 2


def test_nfmg_train_and_sample(tmp_path, capsys):
    motion = tmp_path / "motion.gmxd"
    run(capsys, "gen-data", "--kind", "motion", "--n", "3", "--t", "10", "--seed", "2", "--out", motion)
    (tmp_path / "n.cfg").write_text("model_dim = 8\nn_heads = 2\nff_dim = 16\nd_latent = 4\n"
                                    "enc_layers = 1\ndec_layers = 1\nflow_steps = 2\ncoupling_dim = 8\n")
    code, out, _ = run(capsys, "train", "--data", motion, "--model", "nfmg", "--config", tmp_path / "n.cfg",
                       "--epochs", 2, "--out", tmp_path / "n.ckpt")
    assert code == 0 and "kl=" in out
    code, _, _ = run(capsys, "sample", "--checkpoint", tmp_path / "n.ckpt", "--data", motion, "--n", 3,
                     "--out", tmp_path / "gen.gmxd")
    assert code == 0
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "gen.gmxd", "--metric", "div", "--metric", "ba")
    assert code == 0 and "ba" in out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gmixseq.cli", "inspect-checkpoint", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.strip().startswith("error:")
