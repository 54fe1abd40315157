from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from samlab import bundle
from samlab.cli import (EXIT_EXPERIMENT, EXIT_OK, EXIT_VALIDATION, MANIFEST, ConfigError, config_hash,
                        load_config, main, parse_theta)


def run(tmp_path, command, cfg, seed=1, out="out", extra=()):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg) if isinstance(cfg, dict) else cfg)
    code = main([command, "--config", str(path), "--out", str(tmp_path / out), "--seed", str(seed), *extra])
    return code, tmp_path / out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_bundle_list(capsys):
    assert main(["bundle-list"]) == EXIT_OK
    listed = capsys.readouterr().out.split("\n")
    names = bundle.names()
    assert len(names) >= 6
    for name in ("selfsim2", "bm3", "column", "graph", "ratlock", "eqlyap"):
        assert name in names and any(line.startswith(name) for line in listed)


@pytest.mark.parametrize("name", bundle.names())
def test_every_bundled_system_validates(tmp_path, name):
    code, out = run(tmp_path, "validate", {"ifs": name})
    assert code == EXIT_OK and rows(out / "validate.csv")[1][0] == "True"


def test_ratlock_fails_irrationality(tmp_path):
    code, out = run(tmp_path, "irrationality", {"ifs": "ratlock"})
    assert code == EXIT_OK and rows(out / "irrationality.csv")[1][0] == "VIOLATED"


def test_lyapunov_and_inline_ifs(tmp_path):
    cfg = {"ifs": {"maps": [{"l1": "1/2", "l2": "1/3", "a": ["0", "0"]},
                            {"l1": "1/3", "l2": "1/2", "a": ["1/2", "1/2"]}],
                   "weights": ["1/2", "1/2"]}}
    code, out = run(tmp_path, "lyapunov", cfg)
    assert code == EXIT_OK
    assert rows(out / "lyapunov.csv")[1][2] == "EQUAL"


def test_ifs_from_file(tmp_path):
    (tmp_path / "sys.json").write_text(json.dumps(bundle.get("bm3").to_dict()))
    code, out = run(tmp_path, "irrationality", {"ifs": {"file": "sys.json"}})
    assert code == EXIT_OK and rows(out / "irrationality.csv")[1][0] == "SATISFIED"


def test_parse_error_reports_line_and_column(tmp_path, capsys):
    code, _ = run(tmp_path, "validate", '{\n  "ifs": "bm3",,\n}')
    assert code == EXIT_VALIDATION
    assert "validate.json:2:" in capsys.readouterr().err


def test_unknown_system_and_invalid_ifs_exit_2(tmp_path):
    assert run(tmp_path, "lyapunov", {"ifs": "nope"})[0] == EXIT_VALIDATION
    bad = {"ifs": {"maps": [{"l1": "1", "l2": "1/2", "a": ["0", "0"]},
                            {"l1": "1/2", "l2": "1/2", "a": ["1/2", "0"]}],
                   "weights": ["1/2", "1/2"]}}
    code, out = run(tmp_path, "validate", bad)
    assert code == EXIT_VALIDATION and rows(out / "validate.csv")[1][:2] == ["False", "0"]
    assert run(tmp_path, "dim", bad)[0] == EXIT_VALIDATION


def test_seed_is_mandatory(tmp_path):
    (tmp_path / "c.json").write_text('{"ifs": "bm3"}')
    with pytest.raises(SystemExit) as exc:
        main(["dim", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2


def test_experiment_errors_exit_3(tmp_path):
    # three levels cannot be fitted from 1000 samples at these levels
    code, _ = run(tmp_path, "dim", {"ifs": "bm3", "dim": {"method": "sample", "samples": 1000, "n_min": 4,
                                                          "n_max": 9}})
    assert code == EXIT_EXPERIMENT


@pytest.mark.parametrize("name, expected", [("lebesgue", 1.0), ("cantor", 0.6309), ("dirac", 0.0)])
def test_dim_examples(tmp_path, name, expected):
    cfg = {"ifs": name, "dim": {"target": "x", "resolution": 14, "window": 8}}
    code, out = run(tmp_path, "dim", cfg)
    assert code == EXIT_OK
    assert float(rows(out / "dim.csv")[1][1]) == pytest.approx(expected, abs=0.02)
    assert rows(out / "dim_series.csv")[0] == ["level", "value"]


def test_principal_directions_only_via_explicit_targets(tmp_path):
    assert parse_theta("x") == "x" and parse_theta("1/2") == 0.5 and parse_theta(2) == 2
    with pytest.raises(ConfigError):
        parse_theta("inf")
    code, _ = run(tmp_path, "dim", {"ifs": "column", "dim": {"method": "sample", "target": "proj:x"}})
    assert code == EXIT_VALIDATION
    code, out = run(tmp_path, "dim", {"ifs": "column", "dim": {"method": "sample", "target": "x",
                                                               "samples": 1 << 14}})
    assert code == EXIT_OK and float(rows(out / "dim.csv")[1][1]) <= 0.05


def test_verify_column(tmp_path):
    code, out = run(tmp_path, "verify", {"ifs": "column", "verify": {"thetas": ["x", 0], "samples": 1 << 16}})
    assert code == EXIT_OK
    table = rows(out / "verdicts.csv")
    assert table[0][-1] == "config_hash"
    assert table[1][0] == "x" and table[1][6] == "EXPECTED_FAILURE_PRINCIPAL"


def test_equidist_selfsim2(tmp_path):
    code, out = run(tmp_path, "equidist", {"ifs": "selfsim2", "equidist": {"m": 100000, "depth": 3}})
    assert code == EXIT_OK and float(rows(out / "equidist.csv")[1][3]) < 0.02


SMALL = {
    "dim": {"dim": {"method": "sample", "target": "proj:1/2", "samples": 1 << 13}},
    "verify": {"verify": {"thetas": [0, "y"], "samples": 1 << 13}},
    "lea": {"lea": {"thetas": [0, 1], "N": 4, "n": 3, "trials": 2}},
    "product": {"product": {"N": 3, "n_list": [2, 3], "trials": 2, "samples": 512}},
    "equidist": {"equidist": {"m": 1000}},
    "uniformproj": {"uniformproj": {"N": 6, "bases": 1, "samples": 4096}},
    "conservation": {"conservation": {"trials": 1, "samples": 4096, "n": 8}},
    "ergodicity": {"ergodicity": {"betas": [1, 0.5], "trials": 2, "horizon": 2000}},
    "lyapunov": {},
    "irrationality": {},
    "validate": {},
}


@pytest.mark.parametrize("command", sorted(SMALL))
def test_every_csv_row_carries_the_config_hash(tmp_path, command):
    cfg = {"ifs": "bm3", **SMALL[command]}
    code, out = run(tmp_path, command, cfg, seed=4)
    assert code == EXIT_OK
    manifest = json.loads((out / MANIFEST).read_text())
    h = config_hash(command, cfg, 4)
    assert manifest["config_hash"] == h and manifest["seed"] == 4 and manifest["outputs"]
    for name in manifest["outputs"]:
        table = rows(out / name)
        if table[0] == ["level", "value"]:
            assert len(table) >= 2
            continue
        assert table[0][-1] == "config_hash"
        assert len(table) >= 2 and all(r[-1] == h for r in table[1:])


@pytest.mark.parametrize("command", ["lea", "product", "ergodicity", "uniformproj"])
def test_rerun_is_byte_identical(tmp_path, command, capsys):
    cfg = {"ifs": "bm3", **SMALL[command]}
    code, out = run(tmp_path, command, cfg, seed=9, extra=("--threads", "2"))
    assert code == EXIT_OK
    assert main(["rerun", "--manifest", str(out / MANIFEST), "--out", str(tmp_path / "again")]) == EXIT_OK
    assert "DIFFERS" not in capsys.readouterr().out
    # the worker count does not enter the numbers
    assert main(["rerun", "--manifest", str(out / MANIFEST), "--out", str(tmp_path / "one"),
                 "--threads", "1"]) == EXIT_OK


def test_rerun_detects_tampering(tmp_path):
    code, out = run(tmp_path, "equidist", {"ifs": "selfsim2", **SMALL["equidist"]})
    manifest = json.loads((out / MANIFEST).read_text())
    manifest["outputs"]["equidist.csv"] = "0" * 64
    (out / MANIFEST).write_text(json.dumps(manifest))
    assert main(["rerun", "--manifest", str(out / MANIFEST), "--out", str(tmp_path / "b")]) == EXIT_EXPERIMENT


def test_config_hash_is_order_independent():
    assert config_hash("dim", {"a": 1, "b": 2}, 3) == config_hash("dim", {"b": 2, "a": 1}, 3)
    assert config_hash("dim", {"a": 1}, 3) != config_hash("dim", {"a": 1}, 4)


def test_load_config_rejects_non_objects(tmp_path):
    (tmp_path / "c.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "samlab.cli", "bundle-list"], capture_output=True, text=True)
    assert res.returncode == 0 and "bm3" in res.stdout
