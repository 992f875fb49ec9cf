"""Command-line entry point.

Verbs and the scenario kinds they accept::

    hemivar solve    --config s.json --out dir      # kind solve
    hemivar sweep    --config s.json --out dir      # continuity, perturbed-control
    hemivar control  --config s.json --out dir      # control, perturbed-control
    hemivar verify   --config s.json --out dir      # mosco, audit
    hemivar validate --config s.json                # any kind; no solves

Exit codes: 0 success, 2 config parse errors, 3 validation errors,
4 solver failures.  Errors are printed to stderr as one JSON object.
Every summary JSON carries ``schema`` and ``version`` and is written next to
its JSON Schema (``summary.schema.json``).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .contact import FemModel, solve_contact
from .control import admissible_set_mosco_check, perturbed_control_experiment, solve_control, summary_dict
from .convergence import continuity_experiment, hypothesis_audit, mosco_check_Kg, write_csv
from .errors import HemivarError, SolverError, ValidationError
from .scenario import (
    PerturbationBlock,
    Scenario,
    ScenarioParseError,
    build_scenario_model,
    eta_rule,
    load_scenario,
    parameter_sequence,
    scenario_violations,
)

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_SOLVER = 0, 2, 3, 4

VERB_KINDS = {
    "solve": ("solve",),
    "sweep": ("continuity", "perturbed-control"),
    "control": ("control", "perturbed-control"),
    "verify": ("mosco", "audit"),
}


# --- summary schemas ---------------------------------------------------------


class _Out(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ContactNode(_Out):
    node: int
    u_nu: float
    status: str


class SolveSummary(_Out):
    schema_: Literal["hemivar-solve-summary"] = Field(alias="schema")
    version: Literal[1]
    converged: bool
    outer_iters: int
    vi_residual: Optional[float]
    theta: Optional[float]
    increments: list[float]
    constants: dict[str, Optional[float]]
    contact: list[ContactNode]
    flags: list[str]


class ContinuitySummary(_Out):
    schema_: Literal["hemivar-continuity-summary"] = Field(alias="schema")
    version: Literal[1]
    label: str
    length: int
    final_error: Optional[float]
    tail_nonincreasing: bool
    all_converged: bool
    flags: list[str]


class MoscoSummary(_Out):
    schema_: Literal["hemivar-mosco-summary"] = Field(alias="schema")
    version: Literal[1]
    family: str
    m1_passed: bool
    m2_passed: bool
    passed: bool
    max_recovery_error: float
    max_recovery_excess: float
    membership_violations: int
    limit_violations: int
    notes: list[str]


class QStar(_Out):
    g: float
    s: float


class GridInfo(_Out):
    n_g: int
    n_s: int
    best_index: list[int]


class ControlSummary(_Out):
    schema_: Literal["hemivar-control-summary"] = Field(alias="schema")
    version: Literal[1]
    f2_parametrization: str
    q_star: QStar
    cost: float
    evaluations: int
    grid: GridInfo
    g_range: list[float]
    s_range: list[float]
    u_nu: list[float]
    converged: bool


class PerturbedControlSummary(_Out):
    schema_: Literal["hemivar-perturbed-control-summary"] = Field(alias="schema")
    version: Literal[1]
    reference: ControlSummary
    length: int
    cluster_converged: bool
    cluster_limit: QStar
    cluster_distance: Optional[float]
    grid_step: float
    final_state_error: float
    notes: list[str]


class AuditItem(_Out):
    name: str
    passed: bool
    detail: str
    measured: list[Optional[float]]
    reference: Optional[list[Optional[float]]]


class AuditSummary(_Out):
    schema_: Literal["hemivar-audit-summary"] = Field(alias="schema")
    version: Literal[1]
    passed: bool
    notes: list[str]
    entries: dict[str, AuditItem]


class ValidationReport(_Out):
    schema_: Literal["hemivar-validation-report"] = Field(alias="schema")
    version: Literal[1]
    kind: str
    valid: bool
    violations: list[str]


class ErrorReport(_Out):
    schema_: Literal["hemivar-error"] = Field(alias="schema")
    version: Literal[1]
    exit_code: int
    error: str
    message: str
    violations: list[str]


SUMMARY_MODELS = {
    "hemivar-solve-summary": SolveSummary,
    "hemivar-continuity-summary": ContinuitySummary,
    "hemivar-mosco-summary": MoscoSummary,
    "hemivar-control-summary": ControlSummary,
    "hemivar-perturbed-control-summary": PerturbedControlSummary,
    "hemivar-audit-summary": AuditSummary,
    "hemivar-validation-report": ValidationReport,
    "hemivar-error": ErrorReport,
}

def summary_schema(name: str) -> dict:
    """Published JSON Schema for the summary named ``name``."""
    return SUMMARY_MODELS[name].model_json_schema()


# --- serialization -----------------------------------------------------------


def _finite(x):
    """Recursively replace NaN/inf by None so the output is strict JSON."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(obj: dict) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


class Writer:
    """The single place output files are written; names are fixed per kind."""

    def __init__(self, out: Path):
        self.out = out
        self.written: list[Path] = []

    def text(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.written.append(path)

    def summary(self, data: dict, name: str = "summary.json") -> None:
        model = SUMMARY_MODELS[data["schema"]]
        model.model_validate(_finite(data))
        self.text(name, dumps(data))
        self.text(name.replace(".json", ".schema.json"), dumps(model.model_json_schema()))


# --- kinds -------------------------------------------------------------------


def _solution_csv(model: FemModel, u) -> str:
    nodal = model.to_nodal(u)
    axes = "xyz"[: model.dim]
    header = ["node", *axes, *[f"u_{a}" for a in axes]]
    rows = [(i, *map(float, model.mesh.nodes[i]), *map(float, nodal[i])) for i in range(model.mesh.n_nodes)]
    return write_csv(header, rows)


def run_solve(sc: Scenario, model: FemModel, w: Writer, jobs: int) -> int:
    p = sc.params.vector()
    sol = solve_contact(model, p, sc.solver_config())
    res = sol.result
    un = model.normal_trace(sol.u)
    w.text("solution.csv", _solution_csv(model, sol.u))
    w.summary({
        "schema": "hemivar-solve-summary",
        "version": 1,
        "converged": bool(res.converged),
        "outer_iters": int(res.outer_iters),
        "vi_residual": float(res.vi_residual),
        "theta": float(res.theta),
        "increments": [float(x) for x in res.increment_history],
        "constants": {k: float(v) for k, v in sol.assembled.constants.items()},
        "contact": [
            {"node": int(n), "u_nu": float(un[i]), "status": sol.status[i]} for i, n in enumerate(model.gamma3_nodes)
        ],
        "flags": list(res.flags),
    })
    if not res.converged:
        raise SolverError(f"outer iteration stopped after {res.outer_iters} steps above tolerance")
    return EXIT_OK


def run_continuity(sc: Scenario, model: FemModel, w: Writer, jobs: int) -> int:
    seq = parameter_sequence(sc.params.vector(), sc.sequence)
    tab = continuity_experiment(model, seq, sc.solver_config(), jobs=jobs)
    w.text("continuity.csv", tab.to_csv())
    w.summary({
        "schema": "hemivar-continuity-summary",
        "version": 1,
        "label": tab.label,
        "length": int(len(tab.n)),
        "final_error": tab.final_error(),
        "tail_nonincreasing": tab.tail_nonincreasing(),
        "all_converged": bool(np.all(tab.converged)),
        "flags": list(tab.flags),
    })
    if not np.all(tab.converged):
        raise SolverError("some solves along the sequence hit the outer iteration cap")
    return EXIT_OK


def _kg_probes(model: FemModel, g: float, count: int, seed: int):
    rng = np.random.default_rng(seed)
    probes = []
    for _ in range(count):
        v = rng.normal(size=model.n_free) * max(g, 1.0)
        v[model.normal_idx] = np.minimum(v[model.normal_idx], g)
        probes.append(v)
    return probes


def run_mosco(sc: Scenario, model: FemModel, w: Writer, jobs: int) -> int:
    mb = sc.mosco
    ns = np.arange(1, mb.length + 1)
    if mb.family == "thickness":
        probes = _kg_probes(model, mb.g, mb.probes, sc.seed)
        rep = mosco_check_Kg(model, mb.g + mb.step / ns, mb.g, probes, tol=mb.tol, seed=sc.seed)
    else:
        spec = sc.control.spec()
        if sc.perturbation is not None:
            rule = eta_rule(spec.eta, sc.perturbation)
        else:
            rule = eta_rule(spec.eta, PerturbationBlock(parameter="rho", mode="absolute", step=mb.step, length=mb.length))
        rep = admissible_set_mosco_check(spec, rule, N=mb.length, tol=mb.tol, s_range=spec.s_range(model), seed=sc.seed)
    rows = []
    for i, n in enumerate(ns):
        for k in range(rep.recovery_errors.shape[1]):
            rows.append((int(n), k, float(rep.recovery_errors[i, k]), float(rep.recovery_bounds[i, k]), int(rep.recovery_membership[i, k])))
    w.text("mosco.csv", write_csv(["n", "probe", "recovery_error", "recovery_bound", "member"], rows))
    w.summary({"schema": "hemivar-mosco-summary", "version": 1, "family": mb.family, **rep.summary()})
    return EXIT_OK


def run_control(sc: Scenario, model: FemModel, w: Writer, jobs: int) -> int:
    spec = sc.control.spec()
    pair = solve_control(model, spec, sc.solver_config(), jobs=jobs)
    w.text("landscape.csv", pair.landscape_csv())
    w.text("state.csv", _solution_csv(model, pair.u))
    w.summary(summary_dict(model, spec, pair))
    if not pair.converged:
        raise SolverError("the state solve at the optimal pair did not converge")
    return EXIT_OK


def run_perturbed_control(sc: Scenario, model: FemModel, w: Writer, jobs: int) -> int:
    spec = sc.control.spec()
    rule = eta_rule(spec.eta, sc.perturbation)
    tab = perturbed_control_experiment(model, spec, rule, N=sc.perturbation.length, config=sc.solver_config(), jobs=jobs)
    w.text("perturbed_control.csv", tab.to_csv())
    w.summary({
        "schema": "hemivar-perturbed-control-summary",
        "version": 1,
        "reference": summary_dict(model, spec, tab.reference),
        "length": int(len(tab.n)),
        "cluster_converged": tab.cluster_converged,
        "cluster_limit": {"g": tab.cluster_limit[0], "s": tab.cluster_limit[1]},
        "cluster_distance": tab.cluster_distance,
        "grid_step": tab.grid_step,
        "final_state_error": float(tab.state_error[-1]),
        "notes": list(tab.notes),
    })
    return EXIT_OK


def run_audit(sc: Scenario, model: FemModel, w: Writer, jobs: int) -> int:
    seq = parameter_sequence(sc.params.vector(), sc.sequence)
    rep = hypothesis_audit(model, seq, samples=sc.samples, seed=sc.seed)
    w.text("audit.csv", write_csv(["entry", "passed"], [(k, int(e.passed)) for k, e in rep.entries.items()]))
    w.summary({"schema": "hemivar-audit-summary", "version": 1, **rep.as_dict()})
    return EXIT_OK


RUNNERS = {
    "solve": run_solve,
    "continuity": run_continuity,
    "mosco": run_mosco,
    "control": run_control,
    "perturbed-control": run_perturbed_control,
    "audit": run_audit,
}


# --- entry point -------------------------------------------------------------


class _Fail(Exception):
    def __init__(self, code: int, exc: Exception, violations=()):
        self.code, self.exc, self.violations = code, exc, list(violations)


def _error_json(code: int, exc: Exception, violations=()) -> str:
    return json.dumps({
        "schema": "hemivar-error",
        "version": 1,
        "exit_code": code,
        "error": type(exc).__name__,
        "message": str(exc),
        "violations": list(violations),
    }, ensure_ascii=False, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hemivar", description="Variational-hemivariational contact solver and experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("solve", "sweep", "control", "verify", "validate"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", default=None, help="output directory (overrides the scenario's 'output')")
        p.add_argument("--seed", type=int, default=None, help="overrides the scenario's seed")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for sweeps and grids")
    return parser


def _load(args) -> tuple[Scenario, Path]:
    path = Path(args.config)
    if not path.exists():
        raise _Fail(EXIT_PARSE, ScenarioParseError(f"config file {args.config!r} does not exist"))
    try:
        sc = load_scenario(path)
    except ScenarioParseError as exc:
        raise _Fail(EXIT_PARSE, exc)
    if args.seed is not None:
        sc = sc.model_copy(update={"seed": args.seed})
    return sc, path.parent


def _model(sc: Scenario, base: Path) -> FemModel:
    try:
        return build_scenario_model(sc, base)
    except ValidationError as exc:
        raise _Fail(EXIT_VALIDATION, exc, [str(exc)])


def validate(sc: Scenario, base: Path) -> dict:
    """Violation report for a parsed scenario; builds the model, never solves."""
    try:
        model = build_scenario_model(sc, base)
        violations = scenario_violations(sc, model)
    except ValidationError as exc:
        violations = [str(exc)]
    return {"schema": "hemivar-validation-report", "version": 1, "kind": sc.kind, "valid": not violations, "violations": violations}


def _run(args) -> int:
    sc, base = _load(args)
    if args.verb == "validate":
        sys.stdout.write(dumps(validate(sc, base)))
        return EXIT_OK
    if sc.kind not in VERB_KINDS[args.verb]:
        allowed = ", ".join(VERB_KINDS[args.verb])
        raise _Fail(EXIT_PARSE, ScenarioParseError(f"verb {args.verb!r} runs kinds {allowed}; got {sc.kind!r}"))
    if args.jobs < 1:
        raise _Fail(EXIT_PARSE, ScenarioParseError("--jobs must be at least 1"))
    out = args.out or sc.output
    if out is None:
        raise _Fail(EXIT_PARSE, ScenarioParseError("no output directory: pass --out or set 'output'"))
    model = _model(sc, base)
    violations = scenario_violations(sc, model)
    if violations:
        raise _Fail(EXIT_VALIDATION, ValidationError("; ".join(violations)), violations)
    writer = Writer(Path(out))
    try:
        return RUNNERS[sc.kind](sc, model, writer, args.jobs)
    except SolverError as exc:
        raise _Fail(EXIT_SOLVER, exc)
    except ValidationError as exc:
        raise _Fail(EXIT_VALIDATION, exc, [str(exc)])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except _Fail as fail:
        sys.stderr.write(_error_json(fail.code, fail.exc, fail.violations) + "\n")
        return fail.code
    except HemivarError as exc:
        sys.stderr.write(_error_json(EXIT_SOLVER, exc) + "\n")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
