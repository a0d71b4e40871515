import json

import numpy as np
import pytest

from radonlab.cli import main
from radonlab.grid import GridFunction


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_conditions_pass(tmp_path, capsys):
    code, out, _ = run(capsys, "check-conditions", "--scenario", "heisenberg", "--out", str(tmp_path))
    assert code == 0
    assert "finite-type: PASS" in out and "algebraic: PASS" in out
    data = json.loads((tmp_path / "conditions.json").read_text())
    assert data["config"]["scenario"] == "heisenberg"


def test_check_conditions_gated_failure(tmp_path, capsys):
    code, out, _ = run(capsys, "check-conditions", "--scenario", "cubic-counterexample", "--out", str(tmp_path))
    assert code == 2
    assert "algebraic: FAIL" in out


def test_unknown_scenario_exits_one(tmp_path, capsys):
    code, _, err = run(capsys, "check-conditions", "--scenario", "bogus", "--out", str(tmp_path))
    assert code == 1 and "config error" in err


def test_usage_error_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(capsys, "run", "--config", str(tmp_path / "nope.json"))
    assert code == 1 and "cannot read config" in err


def test_global_flags_before_subcommand(tmp_path, capsys):
    code, _, _ = run(capsys, "--out", str(tmp_path), "check-conditions", "--scenario", "grushin")
    assert code == 0 and (tmp_path / "conditions.json").exists()


def test_build_kernel(tmp_path, capsys):
    code, out, _ = run(capsys, "build-kernel", "--J", "2,2", "--out", str(tmp_path))
    assert code == 0
    assert json.loads(out)["audit"]["passed"]


def test_apply_op_round_trip(tmp_path, capsys):
    target = tmp_path / "Tj.rlgf"
    code, out, _ = run(capsys, "apply-op", "--grid", "9", "--op", "Tj", "--j", "1,1", "--output", str(target),
                       "--out", str(tmp_path))
    assert code == 0
    g = GridFunction.load(target)
    assert g.grid.shape == (9, 9, 9)
    assert np.isclose(json.loads(out)["output_norm"], g.norm(2))
    code, _, _ = run(capsys, "apply-op", "--grid", "9", "--op", "D", "--j", "1,1", "--input", str(target),
                     "--out", str(tmp_path))
    assert code == 0


def test_apply_op_grid_mismatch(tmp_path, capsys):
    target = tmp_path / "f.rlgf"
    run(capsys, "apply-op", "--grid", "9", "--output", str(target), "--out", str(tmp_path))
    code, _, err = run(capsys, "apply-op", "--grid", "11", "--input", str(target), "--out", str(tmp_path))
    assert code == 1 and "grid" in err


def test_estimate_norm_dense(capsys, tmp_path):
    code, out, _ = run(capsys, "estimate-norm", "--grid", "7", "--op", "A", "--j", "1,1", "--dense",
                       "--out", str(tmp_path))
    est = json.loads(out)
    assert code == 0 and est["converged"]
    assert est["value"] == pytest.approx(est["dense"], rel=1e-3)


def decay_config(tmp_path, gate):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"kernel": {"J": [2, 2]}, "grid": {"n": 9},
                                "stability_gate": {"j": [1, 1], "enabled": gate}}))
    return str(path)


def test_decay_scan_writes_csv(tmp_path, capsys):
    code, out, _ = run(capsys, "decay-scan", "--config", decay_config(tmp_path, False), "--range", "2",
                       "--min-epsilon", "0", "--out", str(tmp_path))
    payload = json.loads(out)
    assert code == 0 and payload["status"] == "pass"
    assert payload["summary"]["epsilon"] > 0.5
    lines = (tmp_path / "cotlar.csv").read_text().splitlines()
    assert lines[0] == "# schema_version=1" and lines[1] == "TjStarTk,TjTkStar,distance,j,k,method"


def test_decay_scan_on_unstable_grid_is_gated(tmp_path, capsys):
    code, out, _ = run(capsys, "decay-scan", "--config", decay_config(tmp_path, True), "--range", "2",
                       "--out", str(tmp_path))
    assert code == 2
    assert not json.loads((tmp_path / "summary.json").read_text())["stability_gate"]["passed"]


def test_frobenius_chart_gate(tmp_path, capsys):
    code, out, _ = run(capsys, "frobenius-chart", "--j0", "1,0", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["summary"]["n0"] == 3


def test_w_field(tmp_path, capsys):
    code, out, _ = run(capsys, "w-field", "--scenario", "cubic-counterexample", "--t", "0.1", "0.2",
                       "--x", "0", "--out", str(tmp_path))
    assert code == 0
    row = json.loads(out)
    t1, t2 = 0.1, 0.2
    assert row["W"][0] == pytest.approx(3 * t1**3 + 2 * t1 * t2 + 3 * t2**3, abs=1e-7)
    assert (tmp_path / "w_field.csv").read_text().startswith("# schema_version=1\n")


def test_w_field_wrong_arity(tmp_path, capsys):
    code, _, _ = run(capsys, "w-field", "--t", "0.1", "--out", str(tmp_path))
    assert code == 1


def test_run_from_config(tmp_path, capsys):
    cfg = {"grid": {"n": 9}, "kernel": {"J": [2, 2]}, "out": str(tmp_path / "bundle"),
           "scans": [{"kind": "l1-modulus", "params": {"max_shift": 1}}]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "run", "--config", str(path))
    assert code == 0 and "overall: PASS" in out
    assert (tmp_path / "bundle" / "00-l1-modulus.csv").exists()
