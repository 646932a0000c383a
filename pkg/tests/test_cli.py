import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from vfc.cli import main, render, run
from vfc.scenario import read


def report_schema():
    return json.loads(resources.files("vfc").joinpath("schema/report.json").read_text())


def explicit(**changes):
    doc, _ = read("z_explicit")
    doc = json.loads(json.dumps(doc))
    doc["charts"][0].update(changes)
    return doc


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_check_on_z_passes_with_integral_one():
    code, rep = run(["check", "z"])
    assert code == 0 and rep["status"] == "pass"
    assert all(s["status"] in ("pass", "skipped") for s in rep["suites"])
    assert any(s["status"] == "pass" for s in rep["suites"])
    assert abs(rep["integral"] - 1.0) < 1e-8
    jsonschema.validate(json.loads(render(rep)), report_schema())


def test_completion_of_the_unit_interval_at_zero():
    code, rep = run(["complete-polytope", "interval_completion"])
    assert code == 0
    assert rep["completion_text"] == "[0, inf)"
    jsonschema.validate(json.loads(render(rep)), report_schema())


def test_malformed_scenario_is_a_schema_error(tmp_path):
    doc = explicit(rank="one")
    code, rep = run(["check", write(tmp_path, doc)])
    assert code == 2
    assert rep["error"]["code"] == "SCHEMA"
    jsonschema.validate(json.loads(render(rep)), report_schema())


def test_unparsable_and_missing_files(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    code, rep = run(["validate", str(p)])
    assert code == 2 and rep["error"]["code"] == "SCHEMA"
    code, rep = run(["validate", str(tmp_path / "missing.json")])
    assert code == 2 and rep["error"]["code"] == "IO"


def test_failed_check_exits_one():
    code, rep = run(["check", "z2", "--tol", "1e-30"])
    assert code == 1 and rep["status"] == "fail"


def test_numerical_failure_exits_three(tmp_path):
    # dbar = z is odd under z -> -z, so with a trivial character it is not equivariant
    doc = explicit(group={"cyclic": 2})
    code, rep = run(["vclass", write(tmp_path, doc)])
    assert code == 3
    assert rep["error"]["code"] == "AXIOM_VIOLATION"


def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["check", "z2", "--seed", "3", "--report", str(a)]) == 0
    assert main(["check", "z2", "--seed", "3", "--report", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())
    assert rep["schema"] == "vfc-report/1" and rep["flags"]["seed"] == 3


def test_suite_selection_keeps_the_requested_order():
    code, rep = run(["check", "z", "--suite", "stokes", "--suite", "partition-independence"])
    assert code == 0
    assert [s["suite"] for s in rep["suites"]] == ["stokes", "partition-independence"]


def test_explicit_chart_matches_the_builtin_fixture():
    _, a = run(["integrate", "z_explicit"])
    _, b = run(["integrate", "z"])
    assert abs(a["integral"] - b["integral"]) < 1e-10
    _, va = run(["vclass", "z_explicit"])
    _, vb = run(["vclass", "z"])
    assert va["signed_count"] == vb["signed_count"] == "1/1"


def test_pushforward_and_validate_reports():
    code, rep = run(["pushforward", "z_explicit"])
    assert code == 0 and rep["degree"] == 1 and len(rep["values"]) == 5
    code, rep = run(["validate", "three_chart"])
    assert code == 0 and rep["proper"] and rep["complete"] and rep["virtual_dimension"] == 0
    jsonschema.validate(json.loads(render(rep)), report_schema())


def test_integrate_needs_an_integrand_in_positive_dimension():
    code, rep = run(["integrate", "circle"])
    assert code == 2 and rep["error"]["code"] == "DEGREE_MISMATCH"


@pytest.mark.parametrize("flags", [["--eps", "0.7"], ["--grid", "-1"]])
def test_bad_flags_are_input_errors(flags):
    code, rep = run(["vclass", "z"] + flags)
    assert code == 2


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "vfc.cli", "complete-polytope", "interval_completion"],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0
    assert json.loads(out.stdout)["completion_text"] == "[0, inf)"
