"""Scenario files: versioned JSON describing one experiment.

Unknown fields are rejected everywhere.  Example::

    {
      "version": 1,
      "kind": "solve",
      "model": {"mesh": "rod-8", "young": 3.0},
      "params": {"omega": 0.5, "mu": 0.2, "rho": 0.05, "g": 0.1, "f0": 0.4, "f2": 0.5}
    }

``kind`` is one of solve, continuity, mosco, control, perturbed-control,
audit.  The blocks each kind needs are listed in ``REQUIRED_BLOCKS``.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, model_validator

from . import fem
from .contact import FemModel, ParameterVector, build_model, lambda_violations
from .control import ControlSpec, Eta, control_violations
from .convergence import ParameterSequence
from .errors import HemivarError, ValidationError
from .nonsmooth import ConvexSet
from .solver import SolverConfig

SCENARIO_VERSION = 1

Kind = Literal["solve", "continuity", "mosco", "control", "perturbed-control", "audit"]
Field_ = Union[float, list[float], list[list[float]]]

REQUIRED_BLOCKS = {
    "solve": ("params",),
    "continuity": ("params", "sequence"),
    "audit": ("params", "sequence"),
    "mosco": ("mosco",),
    "control": ("control",),
    "perturbed-control": ("control", "perturbation"),
}


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BSet(Strict):
    kind: Literal["ball", "box"] = "ball"
    radius: float = 1.0
    lower: Optional[list[float]] = None
    upper: Optional[list[float]] = None


class ModelBlock(Strict):
    mesh: str = Field(description="built-in rod-N / square-N or a path to a mesh JSON file")
    young: Optional[float] = None
    lame_mu: Optional[float] = None
    lame_lambda: Optional[float] = None
    B: Optional[BSet] = None
    m0_tilde: Optional[float] = None


class ParamsBlock(Strict):
    omega: float = 0.0
    mu: float = 0.0
    rho: float = 0.0
    g: float = 0.0
    f0: Field_ = 0.0
    f2: Field_ = 0.0

    def vector(self) -> ParameterVector:
        return ParameterVector(self.omega, self.mu, self.rho, self.g, np.asarray(self.f0, dtype=float), np.asarray(self.f2, dtype=float))


class SequenceBlock(Strict):
    parameter: Literal["omega", "mu", "rho", "g", "f0", "f2", "none"]
    mode: Literal["absolute", "relative"] = "absolute"
    step: float = 1.0
    length: int = Field(64, ge=1)


class SolverBlock(Strict):
    outer_tol: float = Field(1e-10, gt=0)
    outer_max_iter: int = Field(500, ge=1)
    inner_tol: float = Field(1e-12, gt=0)
    inner_max_iter: int = Field(20_000, ge=1)
    inner_step_rule: Literal["fixed", "backtracking"] = "fixed"
    residual_directions: int = Field(8, ge=1)


class MoscoBlock(Strict):
    family: Literal["thickness", "control"] = "thickness"
    g: float = 1.0
    step: float = 1.0
    length: int = Field(64, ge=1)
    probes: int = Field(4, ge=1)
    tol: float = Field(1e-6, gt=0)


class EtaBlock(Strict):
    omega: float = 0.0
    mu: float = 0.0
    rho: float = 0.0
    f0: Field_ = 0.0


class ControlBlock(Strict):
    eta: EtaBlock
    g0: float
    h0: float
    rho0: float
    profile: Field_ = 1.0
    target: Union[float, list[float]] = 0.0
    n_g: int = Field(101, ge=1)
    n_s: int = Field(101, ge=1)
    refine: bool = True

    def spec(self) -> ControlSpec:
        e = self.eta
        return ControlSpec(
            Eta(e.omega, e.mu, e.rho, np.asarray(e.f0, dtype=float)),
            self.g0, self.h0, self.rho0,
            np.asarray(self.profile, dtype=float), np.asarray(self.target, dtype=float),
            self.n_g, self.n_s, self.refine,
        )


class PerturbationBlock(Strict):
    parameter: Literal["omega", "mu", "rho", "f0", "none"]
    mode: Literal["absolute", "relative"] = "relative"
    step: float = 1.0
    length: int = Field(64, ge=1)


class Scenario(Strict):
    version: Literal[1]
    kind: Kind
    model: ModelBlock
    params: Optional[ParamsBlock] = None
    sequence: Optional[SequenceBlock] = None
    mosco: Optional[MoscoBlock] = None
    control: Optional[ControlBlock] = None
    perturbation: Optional[PerturbationBlock] = None
    solver: SolverBlock = SolverBlock()
    seed: int = 0
    samples: int = Field(20, ge=1)
    output: Optional[str] = None

    @model_validator(mode="after")
    def _blocks_present(self):
        missing = [b for b in REQUIRED_BLOCKS[self.kind] if getattr(self, b) is None]
        if missing:
            raise ValueError(f"kind {self.kind!r} requires block(s): {', '.join(missing)}")
        return self

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver.model_dump(), seed=self.seed)


class ScenarioParseError(HemivarError):
    """Malformed JSON, unknown fields or wrong types."""


def load_scenario(path_or_text) -> Scenario:
    try:
        if isinstance(path_or_text, dict):
            data = path_or_text
        else:
            p = Path(path_or_text)
            text = p.read_text() if p.exists() else str(path_or_text)
            data = json.loads(text)
        return Scenario.model_validate(data)
    except (json.JSONDecodeError, PydanticError, OSError) as exc:
        raise ScenarioParseError(str(exc)) from exc


def load_mesh(name: str, base_dir: Optional[Path] = None) -> fem.Mesh:
    if name.startswith(("rod-", "square-")) and name.split("-", 1)[1].isdigit():
        return fem.builtin_mesh(name)
    path = Path(name)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    if not path.exists():
        raise ValidationError(f"mesh file {name!r} does not exist")
    return fem.mesh_from_json(path)


def build_scenario_model(sc: Scenario, base_dir: Optional[Path] = None) -> FemModel:
    m = sc.model
    mesh = load_mesh(m.mesh, base_dir)
    B = None
    if m.B is not None:
        if m.B.kind == "ball":
            B = ConvexSet.ball(m.B.radius, dim=1 if mesh.dim == 1 else 3)
        else:
            if m.B.lower is None or m.B.upper is None:
                raise ValidationError("box B needs lower and upper")
            B = ConvexSet.box(m.B.lower, m.B.upper)
    young = m.young
    if mesh.dim == 1 and young is None:
        raise ValidationError("a rod model needs young")
    if mesh.dim == 2 and (m.lame_mu is None or m.lame_lambda is None):
        raise ValidationError("a 2-D model needs lame_mu and lame_lambda")
    return build_model(mesh, young=young, lame_mu=m.lame_mu, lame_lambda=m.lame_lambda, B=B, m0_tilde=m.m0_tilde)


def parameter_sequence(base: ParameterVector, block: SequenceBlock) -> ParameterSequence:
    if block.parameter == "none":
        return ParameterSequence.constant(base, block.length)
    if block.mode == "relative":
        seq = ParameterSequence.relative(base, block.parameter, block.length)
        if block.step != 1.0:
            value = getattr(base, block.parameter)
            seq = ParameterSequence.one_at_a_time(base, block.parameter, np.asarray(value, dtype=float) * block.step, block.length)
        return seq
    step = block.step
    if block.parameter in ("f0", "f2"):
        step = np.full_like(np.asarray(getattr(base, block.parameter), dtype=float), block.step)
    return ParameterSequence.one_at_a_time(base, block.parameter, step, block.length)


def eta_rule(eta: Eta, block: PerturbationBlock):
    if block.parameter == "none":
        return lambda n: eta
    name = block.parameter
    value = np.asarray(getattr(eta, name), dtype=float)
    step = value * block.step if block.mode == "relative" else np.full_like(value, block.step)

    def rule(n):
        new = value + step / n
        return dataclasses.replace(eta, **{name: new if name == "f0" else float(new)})

    return rule


def scenario_violations(sc: Scenario, model: Optional[FemModel]) -> list[str]:
    """Constraint violations of the scenario's parameters (no solves)."""
    out: list[str] = []
    if model is None:
        return out
    if sc.params is not None:
        p = sc.params.vector()
        out += lambda_violations(model, p)
        if sc.sequence is not None and not out:
            seq = parameter_sequence(p, sc.sequence)
            for n, pn in enumerate(seq.elements(), start=1):
                bad = lambda_violations(model, pn)
                if bad:
                    out += [f"sequence element {n}: {b}" for b in bad]
                    break
    if sc.control is not None:
        spec = sc.control.spec()
        out += control_violations(model, spec)
        if sc.perturbation is not None and not out:
            rule = eta_rule(spec.eta, sc.perturbation)
            for n in range(1, sc.perturbation.length + 1):
                bad = control_violations(model, spec.with_eta(rule(n)))
                if bad:
                    out += [f"perturbed problem {n}: {b}" for b in bad]
                    break
    if sc.mosco is not None and sc.mosco.family == "thickness":
        if sc.mosco.g < 0:
            out.append("g ≥ 0 (set U)")
        gs = [sc.mosco.g + sc.mosco.step / n for n in range(1, sc.mosco.length + 1)]
        if min(gs) < 0:
            out.append("g_n ≥ 0 (set U) along the thickness sequence")
    if sc.mosco is not None and sc.mosco.family == "control" and sc.control is None:
        out.append("control-family Mosco check needs a control block")
    return out
