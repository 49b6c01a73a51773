import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import FIXTURES
from gridcheck.cli import main
from gridcheck.errors import ValidationError
from gridcheck.io import (
    GridFile,
    dumps,
    load_json,
    read_grid,
    read_ledger,
    read_spec,
    spec_to_dict,
    write_grid,
)

from test_grid import MERGED_Y_LL

GRID_FIXTURES = ["twin.json", "twin_m1.json", "twin_m2.json", "twin_swapped.json"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    report = json.loads(capsys.readouterr().out)
    assert report["exit_status"] == code
    return code, report


def edit_grid(src, dst, fn):
    doc = json.loads(src.read_text())
    fn(doc)
    dst.write_text(json.dumps(doc))
    return dst


# -- file formats -------------------------------------------------------------

@pytest.mark.parametrize("name", GRID_FIXTURES)
def test_grid_round_trip(name, tmp_path):
    gf = read_grid(FIXTURES / name)
    write_grid(tmp_path / "g.json", gf)
    again = read_grid(tmp_path / "g.json")
    assert again == gf
    assert again.to_dict() == gf.to_dict()


def test_ledger_and_spec_round_trip():
    ledger = read_ledger(FIXTURES / "twin_m1_ledger.json")
    assert ledger.capacity == {1: 1, 2: 2}
    spec = read_spec(FIXTURES / "twin_spec.json")
    assert [(a, b) for a, b, _ in spec.lines] == [(1, 3), (2, 4), (2, 5), (6, 4)]
    assert read_spec(FIXTURES / "twin_spec.json").lines == spec.lines
    assert spec_to_dict(spec)["lines"][0]["grid_node"] == 1


def test_rational_powers_survive():
    gf = read_grid(FIXTURES / "twin_m1.json")
    grid = gf.to_partitioned(exact=True)
    assert [str(p) for p in grid.P_L] == ["2/25", "2/25"]


def test_twin_file_matches_merged_matrix():
    assert read_grid(FIXTURES / "twin.json").to_partitioned(exact=True).Y_LL.tolist() == MERGED_Y_LL


def test_dumps_formats_numbers():
    text = dumps({"a": 0.1, "b": float("inf"), "c": [1, 2]})
    assert '"a": 0.10000000000000001' in text
    assert '"b": null' in text


def test_malformed_json_reports_location(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": [\n  {"id": 1,,}\n]}')
    with pytest.raises(ValidationError, match="line 2"):
        load_json(bad)


def test_unknown_schema_version(tmp_path):
    path = edit_grid(FIXTURES / "twin_m1.json", tmp_path / "g.json",
                     lambda d: d.update(schema_version=99))
    with pytest.raises(ValidationError, match="schema"):
        read_grid(path)


def test_grid_file_from_dict_validates():
    doc = json.loads((FIXTURES / "twin_m1.json").read_text())
    doc["lines"].append({"i": 1, "j": 42, "conductance": 1})
    with pytest.raises(ValidationError):
        GridFile.from_dict(doc)


# -- validate -----------------------------------------------------------------

def test_validate_twin(capsys):
    code, rep = run(capsys, "validate", FIXTURES / "twin.json")
    assert code == 0
    verdicts = {n["id"]: n["verdict"] for n in rep["result"]["hierarchy"]["nodes"]}
    assert verdicts == {1: "satisfies-i", 2: "satisfies-i", 3: "satisfies-ii",
                        4: "both", 5: "both"}


def test_validate_swapped_order(capsys):
    code, rep = run(capsys, "validate", FIXTURES / "twin_swapped.json")
    assert code == 3
    assert rep["result"]["hierarchy"]["passed"] is False


def test_validate_dangling_endpoint(capsys, tmp_path):
    path = edit_grid(FIXTURES / "twin.json", tmp_path / "g.json",
                     lambda d: d["lines"].append({"i": 1, "j": 99, "conductance": 1}))
    code, rep = run(capsys, "validate", path)
    assert code == 2
    assert "99" in rep["result"]["message"]


def test_validate_malformed_json(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  oops\n}")
    code, rep = run(capsys, "validate", bad)
    assert code == 2
    assert "line 2" in rep["result"]["message"]


def test_validate_missing_file(capsys, tmp_path):
    code, _ = run(capsys, "validate", tmp_path / "nope.json")
    assert code == 2


# -- check --------------------------------------------------------------------

def test_check_virtual_m1(capsys):
    code, rep = run(capsys, "check", FIXTURES / "twin_m1.json", "--virtual")
    assert code == 0
    data = rep["result"]["report"]
    assert data["lhs"] == [0.08, 0.08]
    np.testing.assert_allclose(data["rhs"], [1 / 8, 1 / 12], rtol=1e-15)


def test_check_scaled_demand_fails(capsys, tmp_path):
    def scale(doc):
        for n in doc["nodes"]:
            if n["kind"] == "load":
                n["power"] = "4/5"
    path = edit_grid(FIXTURES / "twin_m1.json", tmp_path / "g.json", scale)
    code, _ = run(capsys, "check", path, "--virtual")
    assert code == 1


def test_check_single_block_conditions_agree(capsys):
    _, r1 = run(capsys, "check", FIXTURES / "twin_m1.json", "--condition", "thm1")
    _, r6 = run(capsys, "check", FIXTURES / "twin_m1.json", "--condition", "thm6")
    a, b = r1["result"]["report"], r6["result"]["report"]
    assert a["verdict"] == b["verdict"]
    np.testing.assert_allclose(a["lhs"], b["lhs"], rtol=1e-12)


def test_check_swapped_is_inapplicable(capsys):
    code, rep = run(capsys, "check", FIXTURES / "twin_swapped.json")
    assert code == 3
    assert rep["result"]["nodes"] == [3]


def test_epsilon_env_var(capsys, monkeypatch):
    monkeypatch.setenv("GRIDCHECK_EPSILON", "0.5")
    code, rep = run(capsys, "check", FIXTURES / "twin_m1.json")
    assert code == 1
    assert rep["result"]["report"]["epsilon"] == 0.5
    monkeypatch.setenv("GRIDCHECK_EPSILON", "abc")
    code, _ = run(capsys, "check", FIXTURES / "twin_m1.json")
    assert code == 2


def test_epsilon_flag_overrides_env(capsys, monkeypatch):
    monkeypatch.setenv("GRIDCHECK_EPSILON", "0.5")
    code, _ = run(capsys, "check", FIXTURES / "twin_m1.json", "--epsilon", "1e-9")
    assert code == 0


# -- attach -------------------------------------------------------------------

def test_attach_twin(capsys, tmp_path):
    out = tmp_path / "merged.json"
    code, rep = run(capsys, "attach", FIXTURES / "twin_m1.json",
                    FIXTURES / "twin_m2.json", FIXTURES / "twin_spec.json",
                    "--out", out)
    assert code == 0
    res = rep["result"]
    assert res["status"] == "pass"
    np.testing.assert_allclose(res["thm8"]["lhs"], [6 / 25, 31 / 150, 143 / 600], rtol=1e-15)
    merged = read_grid(out).to_partitioned(exact=True)
    assert merged.Y_LL.tolist() == MERGED_Y_LL
    ledger = read_ledger(tmp_path / "merged.ledger.json")
    assert all(ledger.remaining(i) == 0 for i in ledger.capacity)


def test_attach_halved_budget(capsys):
    code, rep = run(capsys, "attach", FIXTURES / "twin_m1.json",
                    FIXTURES / "twin_m2.json", FIXTURES / "twin_spec.json",
                    "--microgrid-ledger", FIXTURES / "twin_m2_half_ledger.json")
    assert code == 3
    a9 = rep["result"]["assumption9"]
    assert a9["over_budget"] == [3, 4, 5]
    slack = {r["id"]: r["slack"] for r in a9["slack"]}
    assert slack == {1: 0.0, 2: 0.0, 3: -0.5, 4: -1.0, 5: -0.5}


def test_attach_empty_spec_onto_self_sufficient_microgrid(capsys, tmp_path):
    spec = tmp_path / "empty.json"
    spec.write_text(json.dumps({"schema_version": 1, "lines": []}))
    # M2 plus a line from node 3 to its own source
    micro = edit_grid(FIXTURES / "twin_m2.json", tmp_path / "m2.json",
                      lambda d: d["lines"].append({"i": 3, "j": 7, "conductance": 1}))
    code, rep = run(capsys, "attach", FIXTURES / "twin_m1.json", micro, spec)
    _, own = run(capsys, "check", micro, "--virtual")
    assert (code == 0) == (own["exit_status"] == 0)
    np.testing.assert_allclose(rep["result"]["thm8"]["lhs"], own["result"]["report"]["lhs"],
                               rtol=1e-12)


# -- solve --------------------------------------------------------------------

def test_solve_merged(capsys):
    code, rep = run(capsys, "solve", FIXTURES / "twin.json")
    assert code == 0
    sol = rep["result"]["solution"]
    assert sol["residual"] < 1e-9 and min(sol["v_load"]) > 0


def test_solve_zero_demand(capsys, tmp_path):
    def zero(doc):
        for n in doc["nodes"]:
            if n["kind"] == "load":
                n["power"] = 0
    path = edit_grid(FIXTURES / "twin.json", tmp_path / "g.json", zero)
    code, rep = run(capsys, "solve", path)
    assert code == 0
    np.testing.assert_allclose(rep["result"]["solution"]["v_load"], rep["result"]["v_open"],
                               rtol=1e-15)


def test_solve_scalar_infeasible(capsys, tmp_path):
    path = tmp_path / "scalar.json"
    path.write_text(json.dumps({
        "schema_version": 1,
        "nodes": [{"id": 1, "kind": "load", "power": 0.3},
                  {"id": 2, "kind": "source", "voltage": 1}],
        "lines": [{"i": 1, "j": 2, "conductance": 1}],
        "microgrids": [{"index": 1, "nodes": [1, 2]}],
    }))
    code, rep = run(capsys, "solve", path, "--max-iter", "500")
    assert code == 1
    assert rep["result"]["diagonal_exact"]["status"] == "infeasible"
    assert any("discriminant" in n for n in rep["result"]["notes"])


# -- reports ------------------------------------------------------------------

def test_reports_are_deterministic(capsys):
    args = ("attach", FIXTURES / "twin_m1.json", FIXTURES / "twin_m2.json",
            FIXTURES / "twin_spec.json")
    main([str(a) for a in args])
    first = capsys.readouterr().out
    main([str(a) for a in args])
    assert capsys.readouterr().out == first


def test_report_dir_outputs(capsys, tmp_path):
    out = tmp_path / "reports"
    run(capsys, "attach", FIXTURES / "twin_m1.json", FIXTURES / "twin_m2.json",
        FIXTURES / "twin_spec.json", "--report-dir", out)
    names = sorted(p.name for p in out.iterdir())
    assert names == ["attach.json", "attach_budget.csv", "attach_margins.csv",
                     "attach_margins.png"]
    header = (out / "attach_margins.csv").read_text().splitlines()[0]
    assert header == "condition,node,lhs,rhs,slack"
    assert (out / "attach_margins.png").read_bytes()[:4] == b"\x89PNG"
    run(capsys, "solve", FIXTURES / "twin.json", "--report-dir", out)
    assert (out / "solve_voltages.png").exists() and (out / "solve_voltages.csv").exists()


def test_survey(capsys, tmp_path):
    code, rep = run(capsys, "survey", "--count", "40", "--seed", "3", "--report-dir", tmp_path)
    assert code == 0
    assert rep["result"]["pass_counts"]["thm6_only"] == 0
    assert (tmp_path / "survey_margins.png").exists()


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gridcheck", "validate",
                           str(FIXTURES / "twin.json")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["tool"] == "gridcheck"
