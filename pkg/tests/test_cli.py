import json

import pytest

from stealthy_lab.cli import main


def _run(capsys, tmp_path, *argv):
    code = main(list(argv) + ["--out", str(tmp_path)])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_hole_bound(capsys, tmp_path):
    code, rep, _ = _run(capsys, tmp_path, "hole-bound", "--d", "1", "--b", "1.0")
    assert code == 0
    assert rep["results"]["r0"] > 0 and rep["results"]["chain"]
    assert (tmp_path / "hole-bound.json").exists()


def test_verify_linstat_zero_field(capsys, tmp_path):
    code, rep, _ = _run(capsys, tmp_path, "verify-linstat", "--family", "zero",
                        "--parameters", "{}", "--count", "50")
    assert code == 0
    assert rep["results"]["analytic"] == 0
    assert rep["results"]["empirical"] == 0


def test_reconstruct_field_rank_deficient(capsys, tmp_path):
    code, rep, err = _run(capsys, tmp_path, "reconstruct-field", "--inside", "[0,1,2,3]")
    assert code == 1
    assert "rank-deficient" in err and "rank-deficient" in rep["error"]


def test_reconstruct_field_ok(capsys, tmp_path):
    code, rep, _ = _run(capsys, tmp_path, "reconstruct-field", "--format", "both")
    assert code == 0 and rep["passed"]
    assert (tmp_path / "reconstruct-field.csv").exists()


def test_usage_errors(capsys, tmp_path):
    assert _run(capsys, tmp_path, "sample-field", "--family", "nope")[0] == 2
    assert _run(capsys, tmp_path, "sample-field", "--set", "bogus=1")[0] == 2
    assert main(["no-such-command"]) == 2


def test_config_file_and_hash_determinism(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 7, "count": 5, "n": 16}))
    a = _run(capsys, tmp_path, "sample-field", "--config", str(cfg))[1]
    b = _run(capsys, tmp_path, "sample-field", "--config", str(cfg))[1]
    assert a["seed"] == 7 and a["config"]["n"] == 16
    assert a["hash"] == b["hash"]
    c = _run(capsys, tmp_path, "sample-field", "--config", str(cfg), "--seed", "8")[1]
    assert c["hash"] != a["hash"]


def test_threads_do_not_change_results(capsys, tmp_path):
    a = _run(capsys, tmp_path, "audit-anticonc", "--count", "3", "--threads", "1")[1]
    b = _run(capsys, tmp_path, "audit-anticonc", "--count", "3", "--threads", "3")[1]
    assert a["hash"] == b["hash"] and a["passed"]


@pytest.mark.parametrize("cmd", ["gen-points", "find-holes", "variance-decay"])
def test_commands_run(capsys, tmp_path, cmd):
    code, rep, _ = _run(capsys, tmp_path, cmd)
    assert code == 0 and rep["passed"]
    assert {"command", "version", "seed", "config", "constants", "results", "predicates",
            "hash", "timestamp"} <= set(rep)
