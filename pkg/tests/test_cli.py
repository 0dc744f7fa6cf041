import csv
import json
import subprocess
import sys

import pytest

from ultrametric.cli import main
from ultrametric.experiments import EXPERIMENTS, SCHEMA

NAMES = [
    "bridge-sample", "centsov-check", "density-convergence", "density-table", "eigen-convergence",
    "fk-validate", "moment-check", "spectrum", "tightness", "trace-convergence", "walk-sample",
]


def _cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_list_plain_and_json(capsys):
    assert main(["list"]) == 0
    text = capsys.readouterr().out
    assert all(name in text for name in NAMES)
    assert main(["list", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [d["name"] for d in doc] == NAMES == sorted(NAMES)
    assert all("summary.json" in d["emits"] and d["required"] for d in doc)


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out) == SCHEMA
    assert sorted(SCHEMA["properties"]["experiment"]["enum"]) == sorted(EXPERIMENTS)


def test_density_table_four_rows(tmp_path):
    cfg = _cfg(tmp_path, {"experiment": "density-table", "p": 2, "n_range": [1], "alpha": [1], "times": [1]})
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--strict"]) == 0
    rows = _rows(out / "density-table_p2_n1_alpha1_t1.csv")
    assert len(rows) == 4
    assert list(rows[0]) == ["u", "norm", "p_tn", "p_t_limit", "abs_diff"]
    # Haar mass per point is 1/2 at n = 1
    assert sum(float(r["p_tn"]) for r in rows) * 0.5 == pytest.approx(1.0, abs=1e-12)
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"experiment", "params", "assertions", "wall_time_s"}
    assert all(set(a) == {"name", "pass", "value", "tolerance"} for a in summary["assertions"])
    assert all(a["pass"] for a in summary["assertions"])


@pytest.mark.parametrize(
    "doc",
    [
        {"experiment": "density-table", "p": 2, "n_range": [1], "alpha": [1], "times": [1], "colour": "red"},
        {"experiment": "no-such-thing"},
        {"experiment": "density-table", "p": 2},
        {"experiment": "density-table", "p": 4, "n_range": [1], "alpha": [1], "times": [1]},
        {"experiment": "density-table", "p": 2, "n_range": [1], "alpha": [1], "times": [-1]},
        {"experiment": "density-table", "p": 2, "n_range": [1], "alpha": [1], "times": [1], "tolerances": {"bogus": 1}},
    ],
)
def test_schema_violation_exit_2(tmp_path, doc):
    assert main(["run", "--config", _cfg(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2


def test_unreadable_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2


def test_capacity_guard_exit_3(tmp_path):
    doc = {"experiment": "spectrum", "p": 2, "n_range": [7], "alpha": [1], "potential": {"kind": "power", "gamma": 1}, "times": [1]}
    assert main(["run", "--config", _cfg(tmp_path, doc), "--out", str(tmp_path / "o")]) == 3


def test_strict_assertion_failure_exit_1(tmp_path):
    # the n = 2 moment slope sits well above k / alpha
    doc = {"experiment": "moment-check", "p": 2, "n_range": [2], "alpha": [2], "k": 1}
    cfg = _cfg(tmp_path, doc)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--strict"]) == 1
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    rows = _rows(tmp_path / "b" / "moments_n2_alpha2.csv")
    assert list(rows[0]) == ["s", "k", "moment", "bound_ratio"]


def test_table_potential(tmp_path):
    table = tmp_path / "v.csv"
    table.write_text("u,v\n" + "".join(f"{u},{u % 3}\n" for u in range(16)))
    doc = {
        "experiment": "spectrum", "p": 2, "n_range": [2], "alpha": [1],
        "potential": {"kind": "table", "table_file": "v.csv"}, "times": [0.5],
    }
    out = tmp_path / "o"
    assert main(["run", "--config", _cfg(tmp_path, doc), "--out", str(out), "--strict"]) == 0
    assert len(_rows(out / "propagator_n2_alpha1_t0.5.csv")) == 256
    assert len(_rows(out / "spectrum_alpha1.csv")) == 16
    doc["n_range"] = [1, 2]
    assert main(["run", "--config", _cfg(tmp_path, doc), "--out", str(out)]) == 2
    doc["n_range"] = [2]
    (tmp_path / "neg.csv").write_text("u,v\n" + "".join(f"{u},{-u}\n" for u in range(16)))
    doc["potential"]["table_file"] = "neg.csv"
    assert main(["run", "--config", _cfg(tmp_path, doc), "--out", str(out)]) == 2
    doc["potential"]["table_file"] = "missing.csv"
    assert main(["run", "--config", _cfg(tmp_path, doc), "--out", str(out)]) == 2


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    doc = {"experiment": "walk-sample", "p": 2, "n_range": [2], "alpha": [1], "times": [1], "seed": 3, "paths": 9000, "steps": 3}
    cfg = _cfg(tmp_path, doc)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    monkeypatch.setenv("ULTRAMETRIC_THREADS", "4")
    main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
    name = "paths_n2_alpha1_t1.csv"
    data = (tmp_path / "a" / name).read_bytes()
    assert data == (tmp_path / "b" / name).read_bytes()
    assert data.startswith(b"path_id,k,time,u\n")
    assert not list((tmp_path / "a").glob(".*.tmp"))


def test_output_dir_from_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    doc = {"experiment": "centsov-check", "p": 2, "n_range": [2], "alpha": [2], "k": 1.5, "time_grid": [0.1, 0.5, 1.0], "output_dir": "res"}
    assert main(["run", "--config", _cfg(tmp_path, doc)]) == 0
    assert (tmp_path / "res" / "summary.json").exists()
    assert len(_rows(tmp_path / "res" / "centsov_n2_alpha2.csv")) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ultrametric", "list", "--json"], capture_output=True, text=True, check=True)
    assert len(json.loads(res.stdout)) == 11
