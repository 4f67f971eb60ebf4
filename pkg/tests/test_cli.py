import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sysid_clt import cli
from sysid_clt.bounds import rate_report
from sysid_clt.gramians import compute_gramians
from sysid_clt.montecarlo import gap_demonstration
from sysid_clt.presets import build_preset


def _run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run(list(argv), stdout=out, stderr=err)
    text = out.getvalue()
    return code, (json.loads(text) if text.strip() else None), err.getvalue()


def test_gap_csv_columns(tmp_path):
    out = tmp_path / "gap.csv"
    code, summary, _ = _run("gap", "--preset", "frob-gap", "--dims", "2,4", "--T", "200", "--m", "1",
                            "--N", "10", "--seed", "7", "--out", str(out))
    assert code == 0
    lines = out.read_bytes().split(b"\n")
    assert lines[0] == b"d,measured,stderr,gamma_f,prior_frob,ratio_prior,ratio_measured"
    assert b"\r" not in out.read_bytes()
    rows = cli.read_csv(out)
    direct = gap_demonstration("frob-gap", [2, 4], T=200, m=1, N=10, seed=7)
    for r, e in zip(rows, direct):
        assert r["measured"] == e["measured"] and r["ratio_prior"] == e["ratio_prior"]
    assert summary["seed"] == 7 and summary["csv"] == str(out)


def test_gap_needs_gap_preset():
    code, _, err = _run("gap", "--preset", "zero", "--dims", "2", "--T", "10", "--N", "3")
    assert code == 1 and "gap" in err


def test_identities_example():
    code, summary, _ = _run("identities", "--preset", "scalar-stable", "--d", "4", "--m", "2", "--T", "30",
                            "--seed", "1", "--self-check")
    assert code == 0
    for key in ("residual_col", "residual_row", "quadform_max_residual"):
        assert summary[key] <= 1e-9
    assert summary["self_check"] is True


def test_rates_is_deterministic_and_matches_library():
    argv = ("rates", "--preset", "op-gap", "--d", "32", "--m", "1", "--T", "1000")
    a = _run(*argv)
    b = _run(*argv[:-2], "--T", "1000", "--seed", "123")
    assert a[0] == 0
    assert a[1]["gamma_op_target"] == b[1]["gamma_op_target"]
    inst = build_preset("op-gap", 32)
    rep = rate_report(inst, compute_gramians(inst, 1000), 1, 1000)
    assert a[1]["gamma_op_target"] == rep.gamma_op_target
    assert a[1]["prior_op"] == rep.prior_op


def test_seed_drawn_and_printed_when_absent():
    code, summary, _ = _run("fit", "--preset", "scalar-stable", "--d", "2", "--T", "50")
    assert code == 0
    seed = summary["seed"]
    assert isinstance(seed, int)
    again = _run("fit", "--preset", "scalar-stable", "--d", "2", "--T", "50", "--seed", str(seed))[1]
    assert again["a_hat"] == summary["a_hat"]


def test_usage_errors():
    assert _run()[0] == 1
    assert _run("nonsense")[0] == 1
    assert _run("fit", "--preset", "no-such")[0] == 1
    assert _run("fit")[0] == 1
    assert _run("sweep", "--preset", "zero")[0] == 1
    assert _run("fit", "--preset", "zero", "--m", "0")[0] == 1


def test_help_exits_zero(capsys):
    assert cli.run(["--help"]) == 0


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run("fit", "--config", str(bad))[0] == 1
    mismatch = tmp_path / "mismatch.json"
    mismatch.write_text(json.dumps({"a": [[0.5, 0.0], [0.0, 0.5]], "sigma_w": [[1.0]]}))
    assert _run("fit", "--config", str(mismatch), "--seed", "1")[0] == 1
    missing = tmp_path / "missing.json"
    assert _run("fit", "--config", str(missing))[0] == 1


def test_config_run(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"a": [[0.5, 0.2], [0.0, 0.4]], "sigma_w": [[1.0, 0.1], [0.1, 1.0]],
                               "m_grid": [3], "T_grid": [40], "N": 5, "seed": 11,
                               "constants": {"c1": 2.0, "k_vec": 1.5}}))
    code, summary, _ = _run("rates", "--config", str(cfg))
    assert code == 0
    assert summary["constants_used"]["c1"] == 2.0 and summary["constants_used"]["k_vec"] == 1.5
    assert summary["m"] == 3 and summary["T"] == 40 and summary["seed"] == 11


def test_numerical_failure_exit_code():
    code, _, err = _run("fit", "--preset", "zero", "--d", "3", "--m", "1", "--T", "2", "--seed", "0")
    assert code == 2 and "numerical" in err


def test_self_check_violation_exit_code(monkeypatch):
    monkeypatch.setattr(cli, "IDENTITY_TOL", -1.0)
    code, summary, _ = _run("identities", "--preset", "zero", "--d", "2", "--m", "2", "--T", "5", "--seed", "0",
                            "--self-check")
    assert code == 3 and summary["self_check"] is False


@pytest.mark.parametrize("argv", [
    ("simulate", "--preset", "isotropic-stable", "--d", "2", "--m", "2", "--T", "5"),
    ("fit", "--preset", "frob-gap", "--d", "3", "--T", "100"),
    ("decompose", "--preset", "random-walk", "--d", "2", "--m", "2", "--T", "20"),
    ("isometry", "--preset", "isotropic-stable", "--d", "2", "--m-grid", "1,2", "--T-grid", "20", "--N", "5"),
    ("smallball", "--preset", "zero", "--d", "1", "--k", "1", "--eps", "0.01,0.1", "--N", "1000"),
    ("chevet", "--preset", "zero", "--dims", "2,3", "--N", "50"),
    ("clt-check", "--preset", "scalar-stable", "--d", "1", "--T", "200", "--N", "20", "--regime", "stable"),
    ("sweep", "--preset", "zero", "--d", "2", "--axis", "m", "--values", "50,100", "--T", "2", "--N", "10"),
    ("burkholder", "--preset", "zero", "--d", "8", "--m", "20", "--T", "2", "--N", "5"),
])
def test_every_subcommand_runs(argv, tmp_path):
    code, summary, err = _run(*argv, "--seed", "3", "--self-check")
    assert code == 0, err
    assert summary["command"] == argv[0] and summary["seed"] == 3


def test_threads_do_not_change_csv(tmp_path):
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"sweep{threads}.csv"
        code, _, _ = _run("sweep", "--preset", "scalar-stable", "--d", "2", "--axis", "T", "--values", "50,100",
                          "--m", "1", "--N", "12", "--seed", "5", "--threads", threads, "--out", str(out))
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_emit_csv_empty_and_single(tmp_path):
    p = tmp_path / "e.csv"
    cli.emit_csv([], p, ["d", "value"])
    assert p.read_bytes() == b"d,value\n"
    cli.emit_csv([{"x": 0.5}], p)
    assert p.read_bytes() == b"x\n0.5\n"


def test_emit_csv_quotes_text(tmp_path):
    p = tmp_path / "q.csv"
    cli.emit_csv([{"name": 'a,"b"', "v": 1}], p)
    assert p.read_text(encoding="utf-8") == 'name,v\n"a,""b""",1\n'
    assert cli.read_csv(p) == [{"name": 'a,"b"', "v": 1}]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-10**9, 10**9),
                          st.floats(allow_nan=False, allow_infinity=False),
                          st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\n\x00"),
                                  min_size=1).filter(lambda s: _is_text(s))),
                max_size=8))
def test_emit_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    table = [{"i": i, "f": f, "s": s} for i, f, s in rows]
    cli.emit_csv(table, path, ["i", "f", "s"])
    back = cli.read_csv(path)
    assert len(back) == len(table)
    for b, t in zip(back, table):
        assert b["i"] == t["i"] and float(b["f"]) == t["f"] and b["s"] == t["s"]


def _is_text(s):
    for conv in (int, float):
        try:
            conv(s)
            return False
        except ValueError:
            pass
    return True


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sysid_clt", "rates", "--preset", "scalar-stable", "--T", "10"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert math.isfinite(json.loads(proc.stdout)["gamma_f_target"])


def test_chevet_needs_no_system():
    code, summary, _ = _run("chevet", "--dims", "3,5", "--N", "200", "--seed", "1", "--self-check")
    assert code == 0
    assert [r["d"] for r in summary["table"]] == [3, 5]


def test_sweep_takes_grid_norm_and_output_from_config(tmp_path):
    out = tmp_path / "sweep.csv"
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"preset": "scalar-stable", "T_grid": [50, 100], "norms": ["op"], "N": 20,
                               "seed": 5, "output": str(out)}))
    code, summary, _ = _run("sweep", "--config", str(cfg), "--axis", "T")
    assert code == 0 and summary["csv"] == str(out) and summary["seed"] == 5
    rows = cli.read_csv(out)
    assert [r["T"] for r in rows] == [50, 100]
    assert "prior_op" in rows[0]
    code, _, err = _run("sweep", "--preset", "zero")
    assert code == 1 and "--values" in err
