import csv
import json
import os

import numpy as np

from rsradcom import cli

FAST = ["--set", "max_admm_iters=2", "--set", "saa_samples=8",
        "--set", "sweep.eval_samples=50"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def announced(out):
    return [line[len("wrote "):] for line in out.splitlines()
            if line.startswith("wrote ")]


def test_missing_config_exits_1(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli.main(["run", "--config", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_key_exits_1(tmp_path, capsys):
    assert cli.main(["run", "--set", "system.bogus=1", "--out", str(tmp_path)]) == 1
    assert "system.bogus" in capsys.readouterr().err


def test_default_run(tmp_path, capsys):
    code = cli.main(["run", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    with open(tmp_path / "solution.json") as fh:
        sol = json.load(fh)
    assert code == (0 if sol["converged"] else 2)
    P = cli.read_precoder_csv(tmp_path / "precoder.csv")
    assert P.shape == (4, 3)
    rows = np.sum(np.abs(P) ** 2, axis=1)
    assert np.max(np.abs(rows - 25.0)) <= 1e-4
    assert len(read_csv(tmp_path / "beampattern.csv")) == 181
    res = read_csv(tmp_path / "residuals.csv")
    assert len(res) == sol["iterations"]
    paths = announced(out)
    assert all(os.path.isabs(p) and os.path.isfile(p) for p in paths)
    assert str(tmp_path / "manifest.json") in paths


def test_converging_run_exits_0(tmp_path, capsys):
    code = cli.main(["run", "--out", str(tmp_path), "--set", "access_mode=SDMA",
                     "--set", "reg_lambda=0.1"])
    with open(tmp_path / "solution.json") as fh:
        assert json.load(fh)["converged"]
    assert code == 0


def test_override_recorded_in_manifest(tmp_path, capsys):
    cli.main(["run", "--out", str(tmp_path), "--set", "reg_lambda=1e-1"] + FAST)
    with open(tmp_path / "manifest.json") as fh:
        man = json.load(fh)
    assert man["config"]["system"]["reg_lambda"] == 0.1
    assert "reg_lambda=1e-1" in man["overrides"]
    assert man["finished"] is not None and man["artifact_version"]


def test_rerun_from_manifest(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["run", "--out", str(a), "--seed", "7"] + FAST)
    cli.main(["run", "--out", str(b), "--config", str(a / "manifest.json")])
    for name in ("precoder.csv", "beampattern.csv", "residuals.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_eval_roundtrip(tmp_path, capsys):
    cli.main(["run", "--out", str(tmp_path)] + FAST)
    out = capsys.readouterr().out
    awsr_run = [l for l in out.splitlines() if l.startswith("awsr_bpshz")]
    assert cli.main(["eval", "--precoder", str(tmp_path / "precoder.csv")] + FAST) == 0
    awsr_eval = [l for l in capsys.readouterr().out.splitlines()
                 if l.startswith("awsr_bpshz")]
    assert awsr_run == awsr_eval


def test_sweep_two_modes(tmp_path, capsys):
    code = cli.main(["sweep", "--out", str(tmp_path), "--modes", "rsma,sdma",
                     "--realizations", "2", "--lambdas", "1e-9,1e-1"] + FAST)
    assert code == 0
    for mode in ("rsma", "sdma"):
        rows = read_csv(tmp_path / f"tradeoff_{mode}_partial.csv")
        assert [float(r["lambda"]) for r in rows] == [1e-9, 1e-1]
        assert all(int(r["n_ok"]) + int(r["n_infeasible"]) == 2 for r in rows)
    paths = announced(capsys.readouterr().out)
    assert str(tmp_path / "tradeoff_rsma_partial.csv") in paths


def test_single_lambda_sweep_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--modes", "rsma,sdma", "--realizations", "1", "--lambdas", "1e-9"] + FAST
    assert cli.main(["sweep", "--out", str(a)] + args) == 0
    assert cli.main(["sweep", "--out", str(b), "--jobs", "2"] + args) == 0
    for mode in ("rsma", "sdma"):
        name = f"tradeoff_{mode}_partial.csv"
        assert len(read_csv(a / name)) == 1
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "realizations.csv").read_bytes() == (b / "realizations.csv").read_bytes()
