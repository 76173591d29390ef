import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from samsara.cli import main
from samsara.storage import open_store

INI = """
[run]
n_gen = 400
seed = 2

[target]
kind = analytic

[species.point]
params = x, y
bounds = (-5, 4), (-8, 4)
sigma = 0.5, 0.3
"""


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    assert err_json(capsys)["error"] == "usage"


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == 2
    assert "not found" in err_json(capsys)["message"]


def test_bad_config_reports_all_errors(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text(INI.replace("n_gen = 400", "n_gen = 4.5").replace("seed = 2", "seed = 2\nbogus = 1"))
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "o")]) == 2
    e = err_json(capsys)
    assert e["error"] == "config" and len(e["errors"]) == 2


def test_run_twice_gives_identical_stores(tmp_path, capsys):
    ini = tmp_path / "a.ini"
    ini.write_text(INI)
    for d in ("o1", "o2"):
        assert main(["run", "--config", str(ini), "--out", str(tmp_path / d)]) == 0
    a, b = open_store(tmp_path / "o1"), open_store(tmp_path / "o2")
    assert np.array_equal(a.tau, b.tau) and np.array_equal(a.arrays(0)[0], b.arrays(0)[0])
    assert (tmp_path / "o1" / "config.ini").exists()


def test_bench_then_post_then_export(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["bench", "analytic", "--n-gen", "2000", "--out", str(out)]) == 0
    res = json.loads(capsys.readouterr().out)
    store_dir = res["stores"][0]
    assert main(["post", store_dir, "--out", str(tmp_path / "p"), "--stride", "1", "--catalog"]) == 0
    summary = json.loads((tmp_path / "p" / "summary.json").read_text())
    (name,) = summary["species"]
    rows = list(csv.reader(open(tmp_path / "p" / f"number_pmf_{name}.csv")))
    assert rows[0] == ["n", "probability"]
    assert sum(float(r[1]) for r in rows[1:]) == pytest.approx(1.0)
    capsys.readouterr()
    assert main(["export", store_dir, "--csv", "--out", str(tmp_path / "e")]) == 0
    assert json.loads(capsys.readouterr().out)["files"]


def test_diag_two_chains(tmp_path, capsys):
    assert main(["bench", "analytic", "--n-gen", "1500", "--chains", "2", "--out", str(tmp_path / "b")]) == 0
    stores = json.loads(capsys.readouterr().out)["stores"]
    assert main(["diag", "--stores", *stores, "--refs", "5", "--stride", "5"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep


def test_post_missing_store_is_runtime_error(tmp_path, capsys):
    assert main(["post", str(tmp_path / "none")]) == 1
    assert "error" in err_json(capsys)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "samsara", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "bench" in r.stdout
