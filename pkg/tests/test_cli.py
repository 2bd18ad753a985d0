import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lessvit import cli, verify
from lessvit.errors import CapacityError, NumericError
from lessvit.hypermae import load_checkpoint
from lessvit.spectral import load_config


@pytest.mark.parametrize("kind,rows", [("vnir-plus", 120), ("swir-plus", 120), ("disjoint", 82), ("full", 202)])
def test_gen_config(tmp_path, capsys, kind, rows):
    out = tmp_path / f"{kind}.txt"
    assert cli.main(["gen-config", "--kind", kind, "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == rows + 1
    assert len(load_config(out)) == rows
    assert f"{rows} channels" in capsys.readouterr().out


def test_usage_errors(tmp_path):
    assert cli.main(["gen-config", "--kind", "bogus"]) == 2
    assert cli.main([]) == 2
    assert cli.main(["bench", "--mechanisms", "sparse", "--out", str(tmp_path)]) == 2
    assert cli.main(["gen-config", "--kind", "full", "--out", str(tmp_path / "missing" / "x.txt")]) == 2


def test_pretrain_toy_is_reproducible(tmp_path):
    args = ["pretrain", "--preset", "toy", "--steps", "3", "--seed", "1", "--quiet"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "losses.csv").read_text()
    assert a == (tmp_path / "b" / "losses.csv").read_text()
    rows = list(csv.reader(a.splitlines()))
    assert rows[0] == ["step", "loss"] and [r[0] for r in rows[1:]] == ["1", "2", "3"]
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "pretrain" and manifest["seed"] == 1 and manifest["preset"] == "toy"
    assert manifest["parameter_counts"]["total"] > 0
    model, meta = load_checkpoint(tmp_path / "a" / "checkpoint.npz")
    assert meta["steps"] == 3 and model.config.name == "toy"


def test_pretrain_f64_bit_reproducible(tmp_path):
    args = ["pretrain", "--preset", "toy", "--steps", "2", "--precision", "f64", "--quiet"]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "b" / "losses.csv").read_bytes()
    model, _ = load_checkpoint(tmp_path / "a" / "checkpoint.npz")
    assert model.embed.proj.dtype == np.float64


def test_numeric_and_capacity_errors_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError("loss is NaN")

    monkeypatch.setattr(cli, "train_step", boom)
    assert cli.main(["pretrain", "--steps", "1", "--out", str(tmp_path / "p")]) == 3
    assert json.loads((tmp_path / "p" / "manifest.json").read_text())["command"] == "pretrain"

    def full(*a, **k):
        raise CapacityError("too many tokens")

    monkeypatch.setattr(cli.bench, "measure_latency", full)
    assert cli.main(["bench", "--out", str(tmp_path / "b")]) == 3


def test_verify_exit_codes(monkeypatch, capsys):
    failing = [verify.CheckResult("x", False, 1.0, 0.0)]
    monkeypatch.setattr(verify, "run_all", lambda *a, **k: failing)
    assert cli.main(["verify"]) == 1
    assert "FAIL x" in capsys.readouterr().out
    monkeypatch.setattr(verify, "run_all", lambda *a, **k: [verify.CheckResult("y", True, 0.0, 1.0)])
    assert cli.main(["verify"]) == 0


def test_bench_outputs(tmp_path, capsys):
    out = tmp_path / "bench"
    code = cli.main(["bench", "--channels", "4,8,16,400", "--token-cap", "1000", "--out", str(out)])
    assert code == 0
    rows = list(csv.reader((out / "latency.csv").read_text().splitlines()))
    assert rows[0] == ["mechanism", "C", "reps", "median_s", "normalized", "status"]
    status = {(r[0], r[1]): r[5] for r in rows[1:]}
    assert status[("less", "400")] == "ok" and status[("dense", "400")] == "capacity-exceeded"
    assert (out / "flops_less.csv").read_text().startswith("label,counted,predicted,match")
    printed = capsys.readouterr().out
    assert "exponents: less=" in printed and "dense=" in printed


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "lessvit", "gen-config", "--kind", "disjoint",
                          "--out", str(tmp_path / "c.txt")], capture_output=True, text=True)
    assert res.returncode == 0 and "82 channels" in res.stdout
