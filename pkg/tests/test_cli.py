import json

import jsonschema
import pytest

from hemivar import fem
from hemivar.cli import SUMMARY_MODELS, main, summary_schema
from hemivar.contact import ParameterVector, build_model, solve_contact
from hemivar.convergence import ParameterSequence, continuity_experiment
from hemivar.solver import SolverConfig

ROD = {"mesh": "rod-8", "young": 3.0}
PARAMS = {"omega": 0.5, "mu": 0.2, "rho": 0.05, "g": 0.1, "f0": 0.4, "f2": 0.5}
SMALL_CONTROL = {
    "eta": {"omega": 0.5, "mu": 0.2, "rho": 5e-4, "f0": 2e-2},
    "g0": 3e-3, "h0": 0.0, "rho0": 3e-3, "target": 1.7e-3, "n_g": 11, "n_s": 1,
}


def scenario(tmp_path, name="s.json", **fields):
    data = {"version": 1, "model": ROD, **fields}
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def load_checked(out_dir, name="summary.json"):
    data = json.loads((out_dir / name).read_text())
    schema = json.loads((out_dir / name.replace(".json", ".schema.json")).read_text())
    jsonschema.validate(data, schema)
    jsonschema.validate(data, summary_schema(data["schema"]))
    return data


def test_solve_happy_path(tmp_path, capsys):
    cfg = scenario(tmp_path, kind="solve", params=PARAMS)
    code, _, err = run(capsys, "solve", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0, err
    s = load_checked(tmp_path / "o")
    assert s["converged"] and s["vi_residual"] <= 1e-6
    rows = (tmp_path / "o" / "solution.csv").read_bytes().split(b"\r\n")
    assert rows[0] == b"node,x,u_x" and len(rows) == 10 + 1  # 9 nodes, header, trailing empty
    model = build_model(fem.rod_mesh(8), young=3.0)
    direct = solve_contact(model, ParameterVector(**PARAMS), SolverConfig())
    tip = float(rows[9].split(b",")[2])
    assert tip == pytest.approx(model.to_nodal(direct.u)[8, 0], abs=1e-9)


def test_smallness_violation_exits_3_naming_constraint(tmp_path, capsys):
    cfg = scenario(tmp_path, kind="solve", params={**PARAMS, "mu": 2.5})
    code, _, err = run(capsys, "solve", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 3
    report = json.loads(err)
    jsonschema.validate(report, summary_schema("hemivar-error"))
    assert any(v.startswith("μ‖γ‖² ≤ m̃₀ (set Λ)") for v in report["violations"])
    assert not (tmp_path / "o").exists()


def test_validate_reports(tmp_path, capsys):
    code, out, _ = run(capsys, "validate", "--config", scenario(tmp_path, kind="solve", params=PARAMS))
    assert code == 0 and json.loads(out)["violations"] == []
    code, out, _ = run(capsys, "validate", "--config", scenario(tmp_path, kind="solve", params={**PARAMS, "g": -0.1}))
    rep = json.loads(out)
    assert code == 0 and "g ≥ 0 (set U)" in rep["violations"] and not rep["valid"]
    ctl = {**SMALL_CONTROL, "eta": {"rho": 2.0}, "g0": 1.0, "rho0": 3.0}
    code, out, _ = run(capsys, "validate", "--config", scenario(tmp_path, kind="control", control=ctl))
    rep = json.loads(out)
    jsonschema.validate(rep, summary_schema("hemivar-validation-report"))
    assert "F(η) empty: ρ ≤ g ≤ ρ₀ unsatisfiable with g ≤ g₀" in rep["violations"]


@pytest.mark.parametrize(
    "text",
    [
        "{not json",
        json.dumps({"version": 1, "kind": "solve", "model": ROD, "params": PARAMS, "colour": 1}),
        json.dumps({"kind": "solve", "model": ROD, "params": PARAMS}),
        json.dumps({"version": 2, "kind": "solve", "model": ROD, "params": PARAMS}),
        json.dumps({"version": 1, "kind": "solve", "model": ROD}),
        json.dumps({"version": 1, "kind": "solve", "model": ROD, "params": {**PARAMS, "mu": "lots"}}),
        json.dumps({"version": 1, "kind": "sweep", "model": ROD, "params": PARAMS}),
    ],
)
def test_parse_errors_exit_2(tmp_path, capsys, text):
    path = tmp_path / "bad.json"
    path.write_text(text)
    code, _, err = run(capsys, "solve", "--config", str(path), "--out", str(tmp_path / "o"))
    assert code == 2
    assert json.loads(err)["exit_code"] == 2


def test_verb_kind_mismatch_and_missing_file(tmp_path, capsys):
    cfg = scenario(tmp_path, kind="solve", params=PARAMS)
    assert run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path))[0] == 2
    assert run(capsys, "solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path))[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_solver_failure_exits_4(tmp_path, capsys):
    cfg = scenario(tmp_path, kind="solve", params=PARAMS, solver={"outer_max_iter": 1})
    code, _, err = run(capsys, "solve", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 4
    assert json.loads(err)["error"] == "SolverError"
    # partial artifacts are still written and schema-valid
    assert load_checked(tmp_path / "o")["converged"] is False


def test_continuity_delegates_to_lab(tmp_path, capsys):
    seq = {"parameter": "f2", "mode": "relative", "length": 6}
    cfg = scenario(tmp_path, kind="continuity", params=PARAMS, sequence=seq)
    code, _, err = run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0, err
    load_checked(tmp_path / "o")
    model = build_model(fem.rod_mesh(8), young=3.0)
    tab = continuity_experiment(model, ParameterSequence.relative(ParameterVector(**PARAMS), "f2", 6), SolverConfig())
    assert (tmp_path / "o" / "continuity.csv").read_bytes() == tab.to_csv().encode()


def test_outputs_byte_identical_across_runs_and_jobs(tmp_path, capsys):
    seq = {"parameter": "rho", "mode": "absolute", "step": 0.1, "length": 8}
    cfg = scenario(tmp_path, kind="continuity", params=PARAMS, sequence=seq)
    for out, jobs in (("a", "1"), ("b", "1"), ("c", "3")):
        assert run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / out), "--jobs", jobs)[0] == 0
    files = ["continuity.csv", "summary.json", "summary.schema.json"]
    for f in files:
        a = (tmp_path / "a" / f).read_bytes()
        assert a == (tmp_path / "b" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()


def test_mosco_thickness_and_seed_override(tmp_path, capsys):
    cfg = scenario(tmp_path, kind="mosco", mosco={"family": "thickness", "g": 0.5, "length": 16, "probes": 3})
    for out, seed in (("a", "0"), ("b", "0"), ("c", "7")):
        assert run(capsys, "verify", "--config", cfg, "--out", str(tmp_path / out), "--seed", seed)[0] == 0
    s = load_checked(tmp_path / "a")
    assert s["passed"] and s["membership_violations"] == 0
    a, b, c = ((tmp_path / d / "mosco.csv").read_bytes() for d in "abc")
    assert a == b and a != c
    rows = a.decode().split("\r\n")
    assert rows[0] == "n,probe,recovery_error,recovery_bound,member"


def test_mosco_control_family(tmp_path, capsys):
    cfg = scenario(tmp_path, kind="mosco", mosco={"family": "control", "step": 1e-3, "length": 16}, control=SMALL_CONTROL)
    code, _, err = run(capsys, "verify", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0, err
    assert load_checked(tmp_path / "o")["passed"]


def test_control_and_perturbed_control(tmp_path, capsys):
    cfg = scenario(tmp_path, kind="control", control=SMALL_CONTROL)
    code, _, err = run(capsys, "control", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0, err
    s = load_checked(tmp_path / "o")
    assert 5e-4 <= s["q_star"]["g"] <= 3e-3
    assert (tmp_path / "o" / "landscape.csv").read_bytes().startswith(b"g,s,J\r\n")
    pert = {"parameter": "rho", "mode": "relative", "step": 1.0, "length": 3}
    cfg = scenario(tmp_path, "p.json", kind="perturbed-control", control=SMALL_CONTROL, perturbation=pert)
    code, _, err = run(capsys, "sweep", "--config", cfg, "--out", str(tmp_path / "p"))
    assert code == 0, err
    s = load_checked(tmp_path / "p")
    assert s["length"] == 3 and s["reference"]["schema"] == "hemivar-control-summary"


def test_audit_kind(tmp_path, capsys):
    seq = {"parameter": "mu", "step": 0.1, "length": 8}
    cfg = scenario(tmp_path, kind="audit", params=PARAMS, sequence=seq, samples=3)
    code, _, err = run(capsys, "verify", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == 0, err
    s = load_checked(tmp_path / "o")
    assert "alpha" in s["entries"]


def test_mesh_file_reference(tmp_path, capsys):
    (tmp_path / "mesh.json").write_text(json.dumps(fem.square_mesh(2).to_json()))
    model = {"mesh": "mesh.json", "lame_mu": 3.0, "lame_lambda": 2.0}
    params = {**PARAMS, "f0": [0.0, -0.5], "f2": [0.2, -0.8]}
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"version": 1, "kind": "solve", "model": model, "params": params}))
    code, _, err = run(capsys, "solve", "--config", str(path), "--out", str(tmp_path / "o"))
    assert code == 0, err
    assert (tmp_path / "o" / "solution.csv").read_bytes().startswith(b"node,x,y,u_x,u_y\r\n")
    path.write_text(json.dumps({"version": 1, "kind": "solve", "model": {**model, "mesh": "missing.json"}, "params": params}))
    assert run(capsys, "solve", "--config", str(path), "--out", str(tmp_path / "o"))[0] == 3


def test_published_schemas_are_valid_json_schema():
    for name in SUMMARY_MODELS:
        jsonschema.Draft202012Validator.check_schema(summary_schema(name))
        assert summary_schema(name)["properties"]["schema"]["const"] == name


def test_shipped_scenarios_validate(capsys):
    from pathlib import Path

    shipped = sorted((Path(__file__).resolve().parents[1] / "scenarios").glob("*.json"))
    assert shipped
    for path in shipped:
        code, out, _ = run(capsys, "validate", "--config", str(path))
        assert code == 0 and json.loads(out)["valid"], path.name
