"""Optimal control of the contact problem over thickness and traction.

Fixed data eta = (omega, mu, rho, f0).  The control is q = (g, s): the layer
thickness g and the coefficient s of a fixed traction profile, f2 = s * profile.
Admissible controls form the box

    F(eta) = [rho, min(g0, rho0)] x [-h0 / ||profile||, h0 / ||profile||]

and the cost is L(u) = int_{Gamma3} (u_nu - target)^2 da with nodal quadrature.
The optimizer scans a tensor grid exhaustively, then refines the best grid
point by golden-section search in g and then in s.  Grid ties go to the
smallest g, then the smallest s.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .contact import FemModel, ParameterVector, assemble
from .convergence import MoscoReport, extrapolate_limit, write_csv
from .errors import EmptyAdmissibleSet, ValidationError
from .solver import SolverConfig, solve

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = "hemivar-control-summary"
SUMMARY_VERSION = 1
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Eta:
    """Fixed data of the control problem: (omega, mu, rho, f0)."""

    omega: float = 0.0
    mu: float = 0.0
    rho: float = 0.0
    f0: object = 0.0


@dataclass(frozen=True)
class ControlSpec:
    eta: Eta
    g0: float
    h0: float
    rho0: float
    profile: object
    target: object
    n_g: int = 101
    n_s: int = 101
    refine: bool = True
    golden_tol: float = 1e-10

    def with_eta(self, eta: Eta) -> "ControlSpec":
        return dataclasses.replace(self, eta=eta)

    def profile_field(self, model: FemModel) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.profile, dtype=float), (len(model.gamma3_nodes), model.dim)).copy()

    def target_field(self, model: FemModel) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.target, dtype=float), (len(model.gamma3_nodes),)).copy()

    def g_range(self) -> tuple[float, float]:
        return self.eta.rho, min(self.g0, self.rho0)

    def s_range(self, model: FemModel) -> tuple[float, float]:
        pn = model.l2_gamma3(self.profile_field(model))
        if self.h0 == 0.0 or pn == 0.0:
            return 0.0, 0.0
        return -self.h0 / pn, self.h0 / pn

    def grids(self, model: FemModel):
        glo, ghi = self.g_range()
        slo, shi = self.s_range(model)
        gs = np.linspace(glo, ghi, self.n_g) if ghi > glo else np.array([glo])
        ss = np.linspace(slo, shi, self.n_s) if shi > slo else np.array([slo])
        return gs, ss

    def parameters(self, model: FemModel, g: float, s: float) -> ParameterVector:
        e = self.eta
        return ParameterVector(omega=e.omega, mu=e.mu, rho=e.rho, g=float(g), f0=e.f0, f2=s * self.profile_field(model))


def control_violations(model: FemModel, spec: ControlSpec) -> list[str]:
    """Every violated constraint of Σ, U and F(η); pure, no solves."""
    e = spec.eta
    out = []
    for sym, val in (("ω", e.omega), ("μ", e.mu), ("ρ", e.rho)):
        if val < 0:
            out.append(f"{sym} ≥ 0 (set Σ)")
    if e.rho > spec.rho0:
        out.append("ρ ≤ ρ₀ (set Σ)")
    if e.mu * model.gamma_norm**2 > model.m0_tilde:
        out.append(f"μ‖γ‖² ≤ m̃₀ (set Σ): {e.mu}·{model.gamma_norm**2:.6g} > {model.m0_tilde:.6g}")
    if spec.g0 < 0:
        out.append("g ≥ 0 (set U)")
    if spec.h0 < 0:
        out.append("‖f₂‖ ≤ h₀ (set U)")
    if e.rho > spec.g0:
        out.append("F(η) empty: ρ ≤ g ≤ ρ₀ unsatisfiable with g ≤ g₀")
    if spec.n_g < 1 or spec.n_s < 1:
        out.append("grid resolutions must be positive")
    return out


def check_spec(model: FemModel, spec: ControlSpec) -> None:
    bad = control_violations(model, spec)
    if any(b.startswith("F(η) empty") for b in bad):
        raise EmptyAdmissibleSet("; ".join(bad))
    if bad:
        raise ValidationError("; ".join(bad))


def cost(model: FemModel, u, target) -> float:
    """Nodal quadrature of int_{Gamma3} (u_nu - target)^2 da."""
    r = model.normal_trace(u) - np.broadcast_to(np.asarray(target, dtype=float), (len(model.gamma3_nodes),))
    return float(model.gamma3_weights @ (r * r))


@dataclass
class Evaluation:
    g: float
    s: float
    cost: float
    u: np.ndarray
    converged: bool


class J_Evaluator:
    """Memoized J(q) = L(u(q, eta)).

    Grid points are keyed by their integer grid index; off-grid refinement
    points by their exact float coordinates.
    """

    def __init__(self, model: FemModel, spec: ControlSpec, config: SolverConfig = SolverConfig(outer_tol=1e-11)):
        self.model = model
        self.spec = spec
        self.config = config
        self.target = spec.target_field(model)
        self.memo: dict = {}
        self.gs, self.ss = spec.grids(model)

    @property
    def evaluations(self) -> int:
        return len(self.memo)

    def _solve(self, g, s, u0):
        asm = assemble(self.model, self.spec.parameters(self.model, g, s))
        res = solve(asm.instance, self.config, u0)
        return Evaluation(float(g), float(s), cost(self.model, res.u, self.target), res.u, res.converged)

    def __call__(self, g: float, s: float, u0=None) -> Evaluation:
        key = ("pt", float(g), float(s))
        if key not in self.memo:
            self.memo[key] = self._solve(g, s, u0)
        return self.memo[key]

    def _column(self, j):
        out, u = [], None
        for g in self.gs:
            ev = self._solve(g, self.ss[j], u)
            out.append(ev)
            u = ev.u
        return out

    def grid(self, jobs: int = 1) -> np.ndarray:
        """Evaluate every grid point; returns costs of shape (n_g, n_s).

        Each s-column is swept in increasing g with warm starts, so the
        values do not depend on ``jobs``.
        """
        todo = [j for j in range(len(self.ss)) if ("grid", 0, j) not in self.memo]
        if jobs <= 1:
            cols = [self._column(j) for j in todo]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                cols = list(ex.map(self._column, todo))
        for j, col in zip(todo, cols):
            for i, ev in enumerate(col):
                self.memo[("grid", i, j)] = ev
        return np.array([[self.memo[("grid", i, j)].cost for j in range(len(self.ss))] for i in range(len(self.gs))])

    def grid_point(self, i: int, j: int) -> Evaluation:
        return self.memo[("grid", i, j)]


@dataclass
class OptimalPair:
    g: float
    s: float
    u: np.ndarray
    cost: float
    evaluations: int
    grid_index: tuple
    landscape: np.ndarray = None
    g_grid: np.ndarray = None
    s_grid: np.ndarray = None
    converged: bool = True

    @property
    def q_star(self) -> tuple[float, float]:
        return self.g, self.s

    def landscape_csv(self) -> str:
        rows = [(g, s, self.landscape[i, j]) for i, g in enumerate(self.g_grid) for j, s in enumerate(self.s_grid)]
        return write_csv(["g", "s", "J"], rows)


def _argmin_with_ties(costs: np.ndarray) -> tuple[int, int]:
    # row-major scan: the first minimum has the smallest g, then the smallest s
    flat = int(np.argmin(costs))
    return divmod(flat, costs.shape[1])


def _golden(fun, a: float, b: float, tol: float, max_iter: int = 200):
    """Golden-section minimization on [a, b]; returns (x, f(x))."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def solve_control(
    model: FemModel,
    spec: ControlSpec,
    config: SolverConfig = SolverConfig(outer_tol=1e-11),
    jobs: int = 1,
    evaluator: Optional[J_Evaluator] = None,
) -> OptimalPair:
    """Exhaustive grid search plus golden-section refinement."""
    check_spec(model, spec)
    J = evaluator or J_Evaluator(model, spec, config)
    costs = J.grid(jobs)
    i, j = _argmin_with_ties(costs)
    best = J.grid_point(i, j)
    if spec.refine:
        gs, ss = J.gs, J.ss
        if len(gs) > 1:
            lo, hi = gs[max(i - 1, 0)], gs[min(i + 1, len(gs) - 1)]
            g_opt, c_opt = _golden(lambda g: J(g, best.s, best.u).cost, lo, hi, spec.golden_tol * max(1.0, hi - lo))
            if c_opt < best.cost:
                best = J(g_opt, best.s)
        if len(ss) > 1:
            lo, hi = ss[max(j - 1, 0)], ss[min(j + 1, len(ss) - 1)]
            s_opt, c_opt = _golden(lambda s: J(best.g, s, best.u).cost, lo, hi, spec.golden_tol * max(1.0, hi - lo))
            if c_opt < best.cost:
                best = J(best.g, s_opt)
    return OptimalPair(
        g=best.g,
        s=best.s,
        u=best.u,
        cost=best.cost,
        evaluations=J.evaluations,
        grid_index=(int(i), int(j)),
        landscape=costs,
        g_grid=J.gs,
        s_grid=J.ss,
        converged=best.converged,
    )


def summary_dict(model: FemModel, spec: ControlSpec, pair: OptimalPair) -> dict:
    """JSON-ready description of the optimal pair and its setting."""
    return {
        "schema": SUMMARY_SCHEMA,
        "version": SUMMARY_VERSION,
        "f2_parametrization": "f2 = s * profile (fixed nodal profile on the contact boundary)",
        "q_star": {"g": pair.g, "s": pair.s},
        "cost": pair.cost,
        "evaluations": pair.evaluations,
        "grid": {"n_g": int(len(pair.g_grid)), "n_s": int(len(pair.s_grid)), "best_index": list(pair.grid_index)},
        "g_range": list(spec.g_range()),
        "s_range": list(spec.s_range(model)),
        "u_nu": model.normal_trace(pair.u).tolist(),
        "converged": bool(pair.converged),
    }


# --- perturbed problems ------------------------------------------------------


@dataclass
class PerturbedControlTable:
    n: np.ndarray
    g_star: np.ndarray
    s_star: np.ndarray
    cost: np.ndarray
    state_error: np.ndarray
    reference: OptimalPair
    cluster_labels: np.ndarray
    selected_cluster: int
    cluster_limit: tuple
    cluster_distance: float
    grid_step: float
    notes: list[str] = field(default_factory=list)

    @property
    def cluster_converged(self) -> bool:
        return bool(self.cluster_distance <= self.grid_step)

    def to_csv(self) -> str:
        rows = zip(self.n, self.g_star, self.s_star, self.cost, self.state_error, self.cluster_labels)
        return write_csv(["n", "g_star", "s_star", "cost", "state_error", "cluster"], [(int(a), b, c, d, e, int(f)) for a, b, c, d, e, f in rows])


def _clusters(points: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Single-linkage clusters of control points at a cut of two grid steps."""
    if len(points) == 1:
        return np.ones(1, dtype=int)
    scaled = points / np.where(steps > 0, steps, 1.0)
    return fcluster(linkage(scaled, method="single"), t=2.0, criterion="distance")


def perturbed_control_experiment(
    model: FemModel,
    spec: ControlSpec,
    eta_rule: Callable[[int], Eta],
    N: int = 64,
    config: SolverConfig = SolverConfig(outer_tol=1e-11),
    jobs: int = 1,
) -> PerturbedControlTable:
    """Solve the control problem for eta_n, n = 1..N, and compare with eta.

    The convergence guaranteed for these problems is subsequential, so the
    table also reports clusters of {q*_n}: the selected cluster is the one
    holding most of the last quarter of the sequence, and its tail limit is
    compared with q*.
    """
    ref = solve_control(model, spec, config, jobs)
    rows = []
    for n in range(1, N + 1):
        pair = solve_control(model, spec.with_eta(eta_rule(n)), config, jobs)
        rows.append((n, pair.g, pair.s, pair.cost, model.norm_V(pair.u - ref.u)))
    arr = np.array(rows, dtype=float)
    gs, ss = spec.grids(model)
    steps = np.array([gs[1] - gs[0] if len(gs) > 1 else 0.0, ss[1] - ss[0] if len(ss) > 1 else 0.0])
    pts = arr[:, 1:3]
    labels = _clusters(pts, steps)
    tail = labels[-max(1, N // 4):]
    vals, counts = np.unique(tail, return_counts=True)
    chosen = int(vals[np.argmax(counts)])
    members = np.flatnonzero(labels == chosen)
    ns = arr[members, 0]
    limit = extrapolate_limit(pts[members], ns) if len(members) >= 4 else pts[members[-1]]
    # distance in the g coordinate is measured against the g grid step
    dist = float(abs(limit[0] - ref.g))
    table = PerturbedControlTable(
        n=arr[:, 0].astype(int),
        g_star=arr[:, 1],
        s_star=arr[:, 2],
        cost=arr[:, 3],
        state_error=arr[:, 4],
        reference=ref,
        cluster_labels=labels,
        selected_cluster=chosen,
        cluster_limit=(float(limit[0]), float(limit[1])),
        cluster_distance=dist,
        grid_step=float(steps[0]) if steps[0] > 0 else 0.0,
        notes=["convergence of optimal controls is subsequential; the reported cluster is the best-matching subsequence"],
    )
    return table


def admissible_set_mosco_check(
    spec: ControlSpec,
    eta_rule: Callable[[int], Eta],
    N: int = 64,
    tol: float = 1e-9,
    s_range: tuple = (0.0, 0.0),
    probes: Optional[np.ndarray] = None,
    seed: int = 0,
) -> MoscoReport:
    """(M1)/(M2) for F(eta_n) = [rho_n, b] x S against F(eta) = [rho, b] x S.

    Recovery of a probe (g, s) is the affine map of [rho, b] onto [rho_n, b]:
    ``g_n = rho_n + (g - rho)(b - rho_n)/(b - rho)``, whose error is
    ``|rho_n - rho| (b - g)/(b - rho) <= |rho_n - rho|``.  ``s`` is untouched
    because the coefficient interval S does not depend on eta.
    """
    rho, b = spec.g_range()
    if rho > b:
        raise EmptyAdmissibleSet("F(η) empty: ρ ≤ g ≤ ρ₀ unsatisfiable with g ≤ g₀")
    rhos = np.array([eta_rule(n).rho for n in range(1, N + 1)])
    if np.any(rhos > b):
        raise EmptyAdmissibleSet(f"F(η_n) empty for n = {int(np.argmax(rhos > b)) + 1}")
    slo, shi = s_range
    if probes is None:
        probes = np.array([[rho, slo], [b, shi], [0.5 * (rho + b), 0.5 * (slo + shi)], [rho + 0.25 * (b - rho), slo]])
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    errors = np.zeros((N, len(probes)))
    bounds = np.zeros_like(errors)
    member = np.ones_like(errors, dtype=bool)
    for n, rn in enumerate(rhos):
        for k, (g, s) in enumerate(probes):
            gn = rn + (g - rho) * (b - rn) / (b - rho) if b > rho else rn
            errors[n, k] = abs(gn - g)
            bounds[n, k] = abs(rn - rho) * ((b - g) / (b - rho) if b > rho else 1.0)
            member[n, k] = rn - tol <= gn <= b + tol and slo - tol <= s <= shi + tol
    rng = np.random.default_rng(seed)
    ns = np.arange(1, N + 1)
    limits = np.zeros((len(probes), 2))
    viol = np.zeros(len(probes))
    for k, (g, s) in enumerate(probes):
        # perturbations sized to the set so the tail is past any clipping switch
        d = 0.1 * rng.normal(size=2) * np.array([max(b - rho, 1e-12), max(shi - slo, 1e-12)])
        sel = np.array([[np.clip(g + d[0] / n, rn, b), np.clip(s + d[1] / n, slo, shi)] for n, rn in zip(ns, rhos)])
        limits[k] = extrapolate_limit(sel, ns)
        viol[k] = max(0.0, rho - limits[k, 0], limits[k, 0] - b, slo - limits[k, 1], limits[k, 1] - shi)
    return MoscoReport(errors, bounds, member, limits, viol, tol, ["interval family [ρ_n, min(g₀, ρ₀)]"])


def dumps_summary(model: FemModel, spec: ControlSpec, pair: OptimalPair) -> str:
    return json.dumps(summary_dict(model, spec, pair), indent=2, sort_keys=True)
