import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mitlearn.cli import main

from .conftest import data_path

RUMOUR = [data_path("rumour.model"), data_path("rumour.props")]
POISSON = [data_path("poisson.model"), data_path("poisson.props")]
SMALL = ["--runs", "40", "--init", "8", "--grid", "16", "--workers", "1"]


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_rumour(in_tmp):
    rc = main(["simulate", data_path("rumour.model"), "--set", "ks=1", "--set", "kr=0.8", "-T", "200", "--seed", "7", "-o", "r.csv"])
    assert rc == 0
    table = rows(in_tmp / "r.csv")
    assert table[0] == ["t", "I", "S", "R"]
    assert float(table[1][0]) == 0.0
    assert (in_tmp / "r.csv.manifest.json").exists()


def test_missing_parameter(capsys):
    rc = main(["simulate", data_path("rumour.model"), "--set", "ks=1", "-T", "10", "--seed", "1"])
    assert rc == 2
    assert "kr" in capsys.readouterr().err


def test_simulate_many(in_tmp):
    assert main(["simulate", data_path("poisson.model"), "--set", "mu=2", "-T", "3", "--seed", "1", "--runs", "5", "-o", "p.csv"]) == 0
    assert sorted(p.name for p in in_tmp.glob("p_*.csv")) == ["p_%d.csv" % i for i in range(5)]


def test_seed_is_generated_and_printed(capsys):
    assert main(["simulate", data_path("poisson.model"), "--set", "mu=2", "-T", "1", "-o", "a.csv"]) == 0
    assert "seed:" in capsys.readouterr().err


def test_check_poisson(in_tmp):
    rc = main(["check", *POISSON, "--set", "mu=2", "--runs", "10000", "--seed", "3", "-o", "c.json"])
    assert rc == 0
    rep = json.loads((in_tmp / "c.json").read_text())
    assert abs(rep["marginals"]["above3"] - 0.1429) < 0.012
    assert (in_tmp / "c.json.manifest.json").exists()


def test_check_two_formulae(in_tmp):
    (in_tmp / "two.props").write_text("a: F[0,1] (X > 3);\nb: G[0,1] (X < 2);\n")
    assert main(["check", POISSON[0], "two.props", "--set", "mu=2", "--runs", "200", "--seed", "1", "-o", "c.json"]) == 0
    joint = json.loads((in_tmp / "c.json").read_text())["joint"]
    assert [r["bits"] for r in joint] == ["00", "01", "10", "11"]
    assert sum(r["predictive"] for r in joint) == pytest.approx(1.0)
    assert joint[3]["count"] == 0  # X > 3 and X < 2 throughout cannot both hold


def test_check_zero_runs(capsys):
    assert main(["check", *POISSON, "--set", "mu=2", "--runs", "0", "--seed", "1"]) == 2


def test_check_writes_manifest_without_output(in_tmp):
    assert main(["check", *POISSON, "--set", "mu=2", "--runs", "10", "--seed", "1"]) == 0
    man = json.loads((in_tmp / "check.manifest.json").read_text())
    assert man["seed"] == 1 and man["subcommand"] == "check"
    assert set(man["inputs"]) == set(POISSON)


def test_observe(in_tmp):
    args = ["observe", *RUMOUR, "--set", "ks=1", "--set", "kr=0.8", "-N", "40", "--seed", "5"]
    assert main(args + ["-o", "a.csv"]) == 0
    table = rows(in_tmp / "a.csv")
    assert table[0] == ["bounded", "peak", "extinction", "reach"]
    assert len(table) == 41 and all(v in ("0", "1") for r in table[1:] for v in r)
    assert main(args + ["-o", "b.csv"]) == 0
    assert (in_tmp / "a.csv").read_bytes() == (in_tmp / "b.csv").read_bytes()
    assert main(["observe", *RUMOUR, "--set", "ks=1", "--set", "kr=0.8", "-N", "1", "--seed", "5", "-o", "c.csv"]) == 0
    assert len(rows(in_tmp / "c.csv")) == 2


def _poisson_obs(path, n_true=6, n=40):
    path.write_text("above3\n" + "".join("1\n" if i < n_true else "0\n" for i in range(n)))


def test_identify_schema_and_reproducibility(in_tmp):
    _poisson_obs(in_tmp / "obs.csv")
    base = ["identify", *POISSON, "obs.csv", data_path("poisson.space"), "-T", "1", "--seed", "2", *SMALL]
    assert main(base + ["-o", "a.json"]) == 0
    doc = json.loads((in_tmp / "a.json").read_text())
    assert set(doc) >= {"best", "objective", "laplace_std", "evaluations", "trace_file", "manifest", "mode"}
    assert 1 <= doc["best"]["mu"] <= 3 and doc["mode"] == "ml"
    assert doc["evaluations"] == len(rows(in_tmp / doc["trace_file"])) - 1
    man = json.loads((in_tmp / doc["manifest"]).read_text())
    assert man["seed"] == 2
    # rerunning with the manifest's seed and inputs gives identical outputs
    assert main(base + ["-o", "b.json", "--trace", "a.trace.csv", "--manifest", "a.json.manifest.json"]) == 0
    a = json.loads((in_tmp / "a.json").read_text())
    b = json.loads((in_tmp / "b.json").read_text())
    assert a == b


def test_identify_map(in_tmp):
    _poisson_obs(in_tmp / "obs.csv")
    (in_tmp / "p.priors").write_text("mu ~ gamma(10, 2);\n")
    rc = main(["identify", *POISSON, "obs.csv", data_path("poisson.space"), "--map", "p.priors", "-T", "1", "--seed", "2", *SMALL, "-o", "m.json"])
    assert rc == 0
    assert json.loads((in_tmp / "m.json").read_text())["mode"] == "map"


def test_identify_header_mismatch(in_tmp, capsys):
    (in_tmp / "obs.csv").write_text("wrong\n1\n0\n")
    rc = main(["identify", *POISSON, "obs.csv", data_path("poisson.space"), "-T", "1", "--seed", "2", *SMALL])
    assert rc == 2
    err = capsys.readouterr().err
    assert "wrong" in err and "above3" in err


def test_design_shipped_toggle(in_tmp):
    rc = main(
        [
            "design",
            data_path("toggle.model"),
            data_path("toggle_short.props"),
            data_path("toggle_design.target"),
            data_path("toggle_design.space"),
            "--seed", "1", "--runs", "20", "--init", "8", "--grid", "8", "--workers", "1",
            "-o", "d.json",
        ]
    )
    assert rc == 0
    doc = json.loads((in_tmp / "d.json").read_text())
    assert 0 <= doc["jsd"] <= np.log(2)
    assert [r["bits"] for r in doc["table"]] == ["00", "01", "10", "11"]
    assert [r["target"] for r in doc["table"]] == [0, 0.5, 0.5, 0]
    assert sum(r["achieved"] for r in doc["table"]) == pytest.approx(1)


@pytest.mark.parametrize(
    "content, message",
    [("bits,probability\n0,0.5\n1,0.4\n", "sum"), ("bits,probability\n00,0.5\n01,0.5\n10,0\n11,0\n", "bits")],
)
def test_design_bad_target(in_tmp, capsys, content, message):
    (in_tmp / "t.csv").write_text(content)
    rc = main(["design", *POISSON, "t.csv", data_path("poisson.space"), "-T", "1", "--seed", "1", *SMALL])
    assert rc == 2
    assert message in capsys.readouterr().err


def test_json_errors(capsys):
    rc = main(["--json-errors", "check", *POISSON, "--runs", "5", "--seed", "1"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and "mu" in err["message"]


def test_json_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--json-errors", "nonsense"])
    assert info.value.code == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "usage"


def test_runtime_failure_exit_code(capsys):
    rc = main(["simulate", data_path("poisson.model"), "--set", "mu=-1", "-T", "1", "--seed", "1"])
    assert rc == 3
    assert "negative" in capsys.readouterr().err


def test_parse_error_position(in_tmp, capsys):
    (in_tmp / "bad.props").write_text("a: F[0,1] (X >);\n")
    assert main(["check", POISSON[0], "bad.props", "--set", "mu=2", "--seed", "1"]) == 2
    assert "line 1, column 15" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mitlearn", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout
