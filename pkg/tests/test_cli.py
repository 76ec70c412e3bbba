import json
import subprocess
import sys
import types

import numpy as np
import pytest

from ttlbp import cli, encodings as enc
from ttlbp.engine.trainer import read_metrics_csv

FAST = ["--epochs", "2"]


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


class TestUsage:
    def test_no_command(self, capsys):
        assert run([], capsys)[0] == 2

    def test_bad_choice(self, capsys):
        assert run(["train", "--classifier", "oracle"], capsys)[0] == 2

    def test_invalid_n(self, tmp_path, capsys):
        code, out = run(["train", "--n", "5", "--out", tmp_path], capsys)
        assert code == 2 and "n=5" in out.err

    def test_invalid_k(self, tmp_path, capsys):
        assert run(["train", "--k", "11", "--out", tmp_path], capsys)[0] == 2
        assert run(["train", "--k", "two", "--out", tmp_path], capsys)[0] == 2

    def test_missing_files(self, tmp_path, capsys):
        assert run(["train", "--arch", tmp_path / "nope.json"], capsys)[0] == 2
        assert run(["train", "--data", tmp_path / "nope.json"], capsys)[0] == 2
        assert run(["train", "--config", tmp_path / "nope.json"], capsys)[0] == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"epochz": 3}))
        assert run(["train", "--config", tmp_path / "c.json"], capsys)[0] == 2

    def test_console_script(self):
        r = subprocess.run([sys.executable, "-m", "ttlbp.cli", "estimate-cost", "--k", "0"],
                           capture_output=True, text=True)
        assert r.returncode == 2


class TestTrain:
    def test_metrics_reproducible(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert run(["train", "--k", "2", "--n", "1", *FAST, "--out", tmp_path / d], capsys)[0] == 0
        for name in ("metrics.csv", "checkpoint.npz", "run.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = read_metrics_csv(tmp_path / "a" / "metrics.csv")
        assert len(rows) == 2 and "loss_block1" in rows[0]

    def test_precedence(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"epochs": 3, "lr": 0.05, "k": 5}))
        code, _ = run(["train", "--config", tmp_path / "c.json", "--epochs", "1", "--out", tmp_path / "o"], capsys)
        assert code == 0
        eff = json.loads((tmp_path / "o" / "run.json").read_text())["effective_config"]
        assert eff["epochs"] == 1           # flag beats file
        assert eff["learning_rate"] == 0.05  # file beats default
        assert eff["k"] == 5
        assert eff["momentum"] == 0.9       # default
        assert len(read_metrics_csv(tmp_path / "o" / "metrics.csv")) == 1

    def test_k_and_n_words(self, tmp_path, capsys):
        assert run(["train", "--k", "T", "--n", "all", *FAST, "--out", tmp_path], capsys)[0] == 0
        eff = json.loads((tmp_path / "run.json").read_text())["effective_config"]
        assert (eff["k"], eff["n"]) == (10, 2)

    def test_divergence_exit_code(self, tmp_path, capsys, monkeypatch):
        from ttlbp.engine import trainer
        real = trainer.train_batch

        def poisoned(*a, **kw):
            r = real(*a, **kw)
            r.losses[:] = np.inf
            return r

        monkeypatch.setattr(trainer, "train_batch", poisoned)
        code, out = run(["train", *FAST, "--out", tmp_path], capsys)
        assert code == 1 and "diverged" in out.err
        assert json.loads((tmp_path / "diverged.json").read_text())["snapshot"]["epoch"] == 0


class TestGradcheck:
    def test_default_grid_passes(self, capsys):
        code, out = run(["gradcheck", "--fd-instances", "20"], capsys)
        assert code == 0
        lines = out.out.strip().splitlines()
        assert len(lines) == 3 * 2 + 1 and all(l.startswith("PASS") for l in lines)
        errs = [float(l.split("max_rel_error=")[1].split()[0]) for l in lines[:-1]]
        assert max(errs) <= 1e-10

    def test_corrupted_potential_recursion_fails(self, capsys, monkeypatch):
        import ttlbp.engine.core as core
        real = core.kernels

        def no_leak(spatial, gamma_next, u, tau, theta, u_th, a):
            return real.lif_backward(spatial, gamma_next, u, 0.0, theta, u_th, a)

        monkeypatch.setattr(core, "kernels", types.SimpleNamespace(lif_backward=no_leak))
        code, out = run(["gradcheck", "--fd-instances", "5"], capsys)
        assert code == 1
        assert "FAIL k=4" in out.out
        assert "k=1 n=1" in out.out and "PASS k=1 n=1" in out.out  # k=1 has no temporal term to corrupt
        assert "interval 0: rel_error=" in out.out

    def test_refuses_large_nets(self, capsys):
        code, out = run(["gradcheck", "--arch", "lenet1", "--n", "1"], capsys)
        assert code == 2 and "refusing" in out.err

    def test_writes_report(self, tmp_path, capsys):
        assert run(["gradcheck", "--k", "1,T", "--n", "all", "--fd-instances", "3", "--out", tmp_path], capsys)[0] == 0
        assert (tmp_path / "gradcheck.csv").read_text().count("\n") == 3


class TestEstimate:
    def test_lenet1_table(self, tmp_path, capsys):
        code, _ = run(["estimate-cost", "--arch", "lenet1", "--k", "20,10,5,2,1", "--n", "4,2,1", "--out", tmp_path], capsys)
        assert code == 0
        rows = json.loads((tmp_path / "cost.json").read_text())["rows"]
        assert len(rows) == 15
        assert all(rows[0][f"ratio_{m}"] == 1 for m in ("memory", "memory_access", "additions", "macs"))
        lbp1 = next(r for r in rows if (r["k"], r["n"]) == (1, 1))
        assert abs(lbp1["ratio_macs"] - 0.28) < 0.05
        assert (tmp_path / "cost.csv").read_text().count("\n") == 16

    def test_fom_with_accuracy(self, tmp_path, capsys):
        (tmp_path / "acc.csv").write_text("k,n,classifier_mode,accuracy\n20,all,trainable,0.9\n1,1,trainable,0.88\n")
        code, _ = run(["estimate-cost", "--k", "20,1", "--n", "all,1", "--accuracy", tmp_path / "acc.csv",
                       "--out", tmp_path], capsys)
        assert code == 0
        rows = {(r["k"], r["n"]): r for r in json.loads((tmp_path / "cost.json").read_text())["rows"]}
        assert rows[(20, 4)]["fom"] == 1.0
        assert rows[(1, 1)]["fom"] < 1.0

    def test_sparsity_file(self, tmp_path, capsys):
        (tmp_path / "sp.json").write_text(json.dumps({"layers": [1.0] + [0.05] * 5}))
        assert run(["estimate-cost", "--sparsity", tmp_path / "sp.json", "--out", tmp_path], capsys)[0] == 0


class TestSweep:
    def test_ranked_and_thread_independent(self, tmp_path, capsys, monkeypatch):
        args = ["sweep", "--k", "10,2", "--n", "2,1", "--epochs", "2"]
        monkeypatch.setenv("TTLBP_THREADS", "1")
        assert run([*args, "--out", tmp_path / "a"], capsys)[0] == 0
        monkeypatch.setenv("TTLBP_THREADS", "4")
        code, out = run([*args, "--out", tmp_path / "b"], capsys)
        assert code == 0
        a = (tmp_path / "a" / "sweep.csv").read_bytes()
        assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
        rows = enc_rows(tmp_path / "a" / "sweep.csv")
        assert len(rows) == 4 and [r["best"] for r in rows].count("1") == 1
        bptt = next(r for r in rows if (r["k"], r["n"]) == ("10", "2"))
        assert float(bptt["fom"]) == 1.0
        assert out.out.count(" *") == 1


def enc_rows(path):
    from ttlbp.sweep import read_csv
    return read_csv(path)


class TestConvert:
    def events(self, tmp_path, rows):
        p = tmp_path / "e.csv"
        p.write_text("t_us,x,y,p\n" + "".join(f"{t},{x},{y},{q}\n" for t, x, y, q in rows))
        return p

    def test_gesture_settings_idempotent(self, tmp_path, capsys):
        src = self.events(tmp_path, [(0, 3, 4, 1), (25_000, 0, 0, 0), (25_500, 0, 0, 0)])
        for name in ("a.npz", "b.npz"):
            code, _ = run(["convert-dvs", src, "--dt", "20", "--T", "60", "--sensor", "8x8",
                           "--label", "2", "--out", tmp_path / name], capsys)
            assert code == 0
        assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
        seq = enc.read_frames(tmp_path / "a.npz")
        assert seq.frames.shape == (60, 2, 8, 8) and seq.label == 2
        assert seq.frames[0, 1, 4, 3] == 1 and seq.frames[1, 0, 0, 0] == 1 and seq.frames.sum() == 2

    def test_empty_input_warns(self, tmp_path, capsys):
        src = self.events(tmp_path, [])
        code, out = run(["convert-dvs", src, "--dt", "5", "--T", "100", "--out", tmp_path / "o.npz"], capsys)
        assert code == 0 and "no events" in out.err
        assert not enc.read_frames(tmp_path / "o.npz").frames.any()

    def test_malformed_input(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("t_us,x,y,p\n1,2\n")
        code, out = run(["convert-dvs", p, "--dt", "5", "--T", "3", "--out", tmp_path / "o.npz"], capsys)
        assert code == 1 and "ParseError" in out.err

    def test_bad_sensor_flag(self, tmp_path, capsys):
        src = self.events(tmp_path, [(0, 0, 0, 0)])
        assert run(["convert-dvs", src, "--dt", "5", "--T", "3", "--sensor", "8", "--out", tmp_path / "o"], capsys)[0] == 2
