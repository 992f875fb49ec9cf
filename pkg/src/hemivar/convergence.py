"""Numerical checks of parameter-continuity for the contact problem.

Three experiments:

* ``mosco_check_Kg``: set convergence of the constraint family
  K_g = {v : v_nu <= g on the contact nodes} along a sequence g_n -> g.
* ``continuity_experiment``: solution errors ||u(p_n) - u(p)||_V along a
  parameter sequence p_n -> p.
* ``hypothesis_audit``: measured perturbation constants of the operator,
  friction, compliance and load data along a sequence.

Everything is finite dimensional, so weak and strong convergence coincide
and all limits are audited in the norm topology.  ``limsup`` quantities are
estimated from finitely many terms by fitting a low-degree polynomial in
``1/n`` on the last quarter of the sequence; the value at ``1/n = 0`` is an
estimate, not a proof.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .contact import FemModel, ParameterVector, assemble, lambda_violations, z_distance
from .errors import NegativeThickness, ParameterOutsideLambda, ValidationError
from .nonsmooth import k_rho
from .solver import SolverConfig, solve

log = logging.getLogger(__name__)

PARAMETER_NAMES = ("omega", "mu", "rho", "g", "f0", "f2")

WEAK_STRONG_NOTE = "finite-dimensional space: weak limits audited in the norm topology"


@dataclass(frozen=True)
class ParameterSequence:
    """p_1, ..., p_N given by ``rule(n)``, converging to ``base``."""

    base: ParameterVector
    rule: Callable[[int], ParameterVector]
    length: int = 64
    label: str = ""

    def __post_init__(self):
        if self.length < 1:
            raise ValidationError("sequence length must be at least 1")

    def __getitem__(self, n: int) -> ParameterVector:
        if not 1 <= n <= self.length:
            raise IndexError(n)
        return self.rule(n)

    def elements(self) -> list[ParameterVector]:
        return [self.rule(n) for n in range(1, self.length + 1)]

    def check(self, model: FemModel) -> None:
        """Raise ParameterOutsideLambda if any element (or the base) leaves Lambda."""
        for n, p in [(0, self.base)] + list(enumerate(self.elements(), start=1)):
            bad = lambda_violations(model, p)
            if bad:
                raise ParameterOutsideLambda(f"element {n}: " + "; ".join(bad))

    @classmethod
    def constant(cls, base: ParameterVector, length: int = 64) -> "ParameterSequence":
        return cls(base, lambda n: base, length, "constant")

    @classmethod
    def one_at_a_time(
        cls, base: ParameterVector, name: str, step=1.0, length: int = 64
    ) -> "ParameterSequence":
        """Perturb one component: ``name_n = name + step / n``.

        ``step`` may be an array for the load fields.  ``relative`` sequences
        are obtained with ``step`` equal to the base value itself.
        """
        if name not in PARAMETER_NAMES:
            raise ValidationError(f"unknown parameter {name!r}")
        value = getattr(base, name)
        step = np.asarray(step, dtype=float) if name in ("f0", "f2") else float(step)

        def rule(n):
            new = np.asarray(value, dtype=float) + step / n if name in ("f0", "f2") else value + step / n
            return dataclasses.replace(base, **{name: new})

        return cls(base, rule, length, f"{name}+step/n")

    @classmethod
    def relative(cls, base: ParameterVector, name: str, length: int = 64) -> "ParameterSequence":
        """``name_n = name * (1 + 1/n)``."""
        seq = cls.one_at_a_time(base, name, getattr(base, name), length)
        return dataclasses.replace(seq, label=f"{name}*(1+1/n)")


def _solve_all(instances, config, u0, jobs):
    def run(inst):
        return solve(inst, config, u0)

    if jobs <= 1:
        return [run(i) for i in instances]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        # map keeps submission order, so results merge by index
        return list(ex.map(run, instances))


# --- Mosco convergence of K_g ---------------------------------------------


@dataclass
class MoscoReport:
    recovery_errors: np.ndarray
    recovery_bounds: np.ndarray
    recovery_membership: np.ndarray
    limits: np.ndarray
    limit_violations: np.ndarray
    tol: float
    notes: list[str] = field(default_factory=list)

    @property
    def m1_passed(self) -> bool:
        return bool(
            np.all(self.recovery_errors <= self.recovery_bounds * (1 + 1e-12) + self.tol)
            and np.all(self.recovery_membership)
        )

    @property
    def m2_passed(self) -> bool:
        return bool(np.all(self.limit_violations <= self.tol))

    @property
    def passed(self) -> bool:
        return self.m1_passed and self.m2_passed

    def summary(self) -> dict:
        return {
            "m1_passed": self.m1_passed,
            "m2_passed": self.m2_passed,
            "passed": self.passed,
            "max_recovery_error": float(self.recovery_errors.max(initial=0.0)),
            "max_recovery_excess": float(np.max(self.recovery_errors - self.recovery_bounds, initial=0.0)),
            "membership_violations": int(np.sum(~self.recovery_membership)),
            "limit_violations": int(np.sum(self.limit_violations > self.tol)),
            "notes": list(self.notes),
        }


def extrapolate_limit(values: np.ndarray, ns: np.ndarray, degree: int = 3) -> np.ndarray:
    """Richardson-style tail extrapolation; returns the constant term.

    Fits a polynomial in ``1/n`` of at most ``degree`` by least squares over
    the last quarter of the sequence (at least four terms) and returns its
    value at ``1/n = 0``.  ``values`` has the sequence index on axis 0.
    """
    values = np.asarray(values, dtype=float)
    ns = np.asarray(ns, dtype=float)
    if len(ns) < 2:
        return values[-1]
    k = min(len(ns), max(4, len(ns) // 4))
    deg = min(degree, k - 1)
    X = np.vander(1.0 / ns[-k:], deg + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(X, values[-k:].reshape(k, -1), rcond=None)
    return coef[0].reshape(values.shape[1:])


def _check_gap(g):
    if g < 0:
        raise NegativeThickness(f"thickness g = {g} must be nonnegative")


def mosco_check_Kg(
    model: FemModel,
    g_seq: Sequence[float],
    g: float,
    probes: Sequence[np.ndarray],
    tol: float = 1e-6,
    seed: int = 0,
) -> MoscoReport:
    """(M1) recovery sequences and (M2) limit membership for K_{g_n} -> K_g.

    (M1): each probe v in K_g is recovered by ``v_n = (g_n / g) v`` when
    g > 0, with ``||v_n - v||_V = |g_n - g| / g * ||v||_V`` exactly, and by the
    projection onto K_{g_n} when g = 0.  (M2): selections
    ``v_n = P_{K_{g_n}}(v + d / n)`` with random d converge; their limit,
    extrapolated from the tail, must satisfy ``v_nu <= g + tol``.
    """
    _check_gap(g)
    g_seq = np.asarray(g_seq, dtype=float)
    for gn in g_seq:
        _check_gap(gn)
    nidx = model.normal_idx
    probes = [np.asarray(v, dtype=float) for v in probes]
    for i, v in enumerate(probes):
        if np.any(v[nidx] > g + tol):
            raise ValidationError(f"probe {i} is not in K_g")

    def proj(v, gap):
        w = v.copy()
        w[nidx] = np.minimum(w[nidx], gap)
        return w

    N, P = len(g_seq), len(probes)
    errors = np.zeros((N, P))
    bounds = np.zeros((N, P))
    member = np.ones((N, P), dtype=bool)
    for n, gn in enumerate(g_seq):
        for j, v in enumerate(probes):
            vn = v * (gn / g) if g > 0 else proj(v, gn)
            errors[n, j] = model.norm_V(vn - v)
            bounds[n, j] = abs(gn - g) / g * model.norm_V(v) if g > 0 else 0.0
            member[n, j] = bool(np.all(vn[nidx] <= gn + tol))

    rng = np.random.default_rng(seed)
    ns = np.arange(1, N + 1)
    limits = np.zeros((P, model.n_free))
    viol = np.zeros(P)
    for j, v in enumerate(probes):
        d = 0.1 * max(g, 1e-3) * rng.normal(size=v.size)
        sel = np.array([proj(v + d / n, gn) for n, gn in zip(ns, g_seq)])
        limits[j] = extrapolate_limit(sel, ns)
        viol[j] = max(0.0, float(np.max(limits[j][nidx] - g, initial=0.0)))
    return MoscoReport(errors, bounds, member, limits, viol, tol, [WEAK_STRONG_NOTE])


# --- continuity experiment --------------------------------------------------


@dataclass
class ContinuityTable:
    label: str
    n: np.ndarray
    param_distance: np.ndarray
    solution_error: np.ndarray
    theoretical_bound: np.ndarray
    extra: dict = field(default_factory=dict)
    converged: np.ndarray = None
    flags: list[str] = field(default_factory=list)

    def final_error(self) -> float:
        return float(self.solution_error[-1])

    def tail_nonincreasing(self, count: int = 16, jitter: float = 1e-8) -> bool:
        tail = self.solution_error[-count:]
        return bool(np.all(np.diff(tail) <= jitter))

    def rows(self):
        for i in range(len(self.n)):
            b = self.theoretical_bound[i]
            yield (int(self.n[i]), float(self.param_distance[i]), float(self.solution_error[i]), None if np.isnan(b) else float(b))

    def to_csv(self) -> str:
        return write_csv(
            ["n", "param_distance", "solution_error", "theoretical_bound"],
            [(n, d, e, "" if b is None else b) for n, d, e, b in self.rows()],
        )


def write_csv(header, rows) -> str:
    """RFC-4180 CSV text with a header row and ``.`` decimals (repr floats)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _changed_component(model, p, q):
    names = []
    f0p, f2p = p.fields(model)
    f0q, f2q = q.fields(model)
    for name in ("omega", "mu", "rho", "g"):
        if getattr(p, name) != getattr(q, name):
            names.append(name)
    if np.any(f0p != f0q):
        names.append("f0")
    if np.any(f2p != f2q):
        names.append("f2")
    return names


def perturbation_bound(model: FemModel, p: ParameterVector, q: ParameterVector, u_p: np.ndarray, u_q: np.ndarray) -> float:
    """A-priori bound on ||u(q) - u(p)||_V for data that keep K fixed.

    Returns NaN when the thickness g differs (the constraint set moves and no
    Lipschitz estimate is available).  Each changed component contributes its
    dual-norm perturbation divided by ``m - alpha - beta``.
    """
    changed = _changed_component(model, p, q)
    if "g" in changed:
        return float("nan")
    gamma = model.gamma_norm
    mu_max = max(p.mu, q.mu)
    margin = model.m_F - (mu_max + 1.0) * gamma**2
    unorm = max(model.norm_V(u_p), model.norm_V(u_q))
    total = 0.0
    if "omega" in changed:
        total += 2.0 * abs(q.omega - p.omega) * unorm
    if "rho" in changed:
        total += 2.0 * abs(q.rho - p.rho) * np.sqrt(model.meas_gamma3) * gamma
    if "mu" in changed:
        total += abs(q.mu - p.mu) * gamma**2 * unorm
    if "f0" in changed or "f2" in changed:
        f0p, f2p = p.fields(model)
        f0q, f2q = q.fields(model)
        dy = np.hypot(model.l2_omega(f0q - f0p), model.l2_gamma3(f2q - f2p))
        total += model.d0 * dy
    return float(total / margin)


def continuity_experiment(
    model: FemModel,
    seq: ParameterSequence,
    config: SolverConfig = SolverConfig(outer_tol=1e-11),
    tol: float = 1e-4,
    jobs: int = 1,
) -> ContinuityTable:
    """Solve at p and every p_n; tabulate distances, errors and bounds."""
    seq.check(model)
    base = assemble(model, seq.base)
    ref = solve(base.instance, config)
    elements = seq.elements()
    asms = [assemble(model, p) for p in elements]
    results = _solve_all([a.instance for a in asms], config, ref.u, jobs)
    ns = np.arange(1, seq.length + 1)
    dist = np.array([z_distance(model, seq.base, p) for p in elements])
    err = np.array([model.norm_V(r.u - ref.u) for r in results])
    bound = np.array([perturbation_bound(model, seq.base, p, ref.u, r.u) for p, r in zip(elements, results)])
    extra = {
        "rho_perturbation_bound": np.array([2.0 * abs(p.rho - seq.base.rho) for p in elements]),
        "omega_operator_bound": np.array([2.0 * abs(p.omega - seq.base.omega) for p in elements]),
    }
    converged = np.array([r.converged for r in results])
    table = ContinuityTable(seq.label, ns, dist, err, bound, extra, converged)
    if not ref.converged or not np.all(converged):
        table.flags.append("some solves hit the outer iteration cap")
    if err[-1] > tol:
        table.flags.append(f"error {err[-1]:.3e} at n = {seq.length} exceeds tol {tol:.1e}")
    return table


# --- hypothesis audit --------------------------------------------------------


@dataclass
class AuditEntry:
    name: str
    measured: np.ndarray
    reference: Optional[np.ndarray]
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a, dtype=float).tolist()  # noqa: E731
        return {"name": self.name, "passed": self.passed, "detail": self.detail, "measured": arr(self.measured), "reference": arr(self.reference)}


@dataclass
class AuditReport:
    entries: dict
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries.values())

    def as_dict(self) -> dict:
        return {"passed": self.passed, "notes": self.notes, "entries": {k: e.as_dict() for k, e in self.entries.items()}}


def hypothesis_audit(
    model: FemModel,
    seq: ParameterSequence,
    samples: int = 20,
    seed: int = 0,
    tol: float = 1e-9,
) -> AuditReport:
    """Measure the perturbation hypotheses along ``seq`` on random test vectors.

    Entries: operator perturbation F_n against ``2 |omega_n - omega|``;
    limsup estimates for the friction and compliance terms; ``||f_n - f||_Y``;
    smallness margins ``m - alpha_n - beta_n``; boundedness of c0_n, c1_n;
    alpha_n = mu_n ||gamma||^2; the data-norm constant ``||pi v||_Y / ||v||_V``
    against d0.
    """
    seq.check(model)
    rng = np.random.default_rng(seed)
    ps = seq.elements()
    ns = np.arange(1, seq.length + 1)
    base = assemble(model, seq.base)
    asms = [assemble(model, p) for p in ps]
    inst0 = base.instance
    dim = model.n_free
    scale = 1.0 / max(model.norm_V(np.ones(dim)), 1e-300)
    V = rng.normal(size=(samples, dim)) * scale * 10
    entries = {}

    # operator perturbation: ||A_n v - A v||_* <= F_n ||v||, F_n = 2 |omega_n - omega|
    Fn = np.array(
        [max(inst0.dual_norm(a.instance.apply_A(v) - inst0.apply_A(v)) / max(inst0.norm(v), 1e-300) for v in V) for a in asms]
    )
    Fref = np.array([2.0 * abs(p.omega - seq.base.omega) for p in ps])
    entries["operator_perturbation"] = AuditEntry(
        "operator_perturbation", Fn, Fref, bool(np.all(Fn <= Fref * (1 + tol) + tol)),
        "measured sup ||A_n v - A v||_*/||v|| against 2|omega_n - omega|",
    )

    # friction and compliance limsup along u_n = u + d/n, v_n = v + e/n
    U, W = rng.normal(size=(2, samples, dim)) * scale * 10
    D, E = rng.normal(size=(2, samples, dim)) * scale
    U = np.array([inst0.project_K(u) for u in U])
    W = np.array([inst0.project_K(w) for w in W])
    phi_lim, phi_rhs, jd_lim, jd_rhs = [], [], [], []
    for u, w, d, e in zip(U, W, D, E):
        seq_phi, seq_j = [], []
        for n, a in zip(ns, asms):
            un, wn = u + d / n, w + e / n
            seq_phi.append(a.instance.phi(un, wn) - a.instance.phi(un, un))
            seq_j.append(a.instance.j_dir(un, wn - un))
        phi_lim.append(float(extrapolate_limit(np.array(seq_phi), ns)))
        jd_lim.append(float(extrapolate_limit(np.array(seq_j), ns)))
        phi_rhs.append(inst0.phi(u, w) - inst0.phi(u, u))
        jd_rhs.append(inst0.j_dir(u, w - u))
    phi_lim, phi_rhs, jd_lim, jd_rhs = map(np.array, (phi_lim, phi_rhs, jd_lim, jd_rhs))
    slack = 1e-6 * (1 + np.abs(phi_rhs))
    entries["friction_limsup"] = AuditEntry(
        "friction_limsup", phi_lim, phi_rhs, bool(np.all(phi_lim <= phi_rhs + slack)),
        "extrapolated limit of phi_n(u_n,v_n)-phi_n(u_n,u_n) against phi(u,v)-phi(u,u)",
    )
    slack = 1e-6 * (1 + np.abs(jd_rhs))
    entries["compliance_limsup"] = AuditEntry(
        "compliance_limsup", jd_lim, jd_rhs, bool(np.all(jd_lim <= jd_rhs + slack)),
        "extrapolated limit of j0_n(u_n; v_n-u_n) against j0(u; v-u)",
    )

    # load convergence: f_n -> f in Y
    f0, f2 = seq.base.fields(model)
    fdist = np.array([np.hypot(model.l2_omega(p.fields(model)[0] - f0), model.l2_gamma3(p.fields(model)[1] - f2)) for p in ps])
    f_lim = float(extrapolate_limit(fdist, ns)) if len(ns) > 1 else float(fdist[-1])
    entries["load_convergence"] = AuditEntry(
        "load_convergence", fdist, None, bool(abs(f_lim) <= 1e-6 * (1.0 + fdist.max(initial=0.0))),
        "||f_n - f||_Y with extrapolated limit 0",
    )

    # smallness margins and boundedness of c0_n, c1_n
    margins = np.array([a.constants["m_p"] - a.constants["alpha_p"] - a.constants["beta_p"] for a in asms])
    m0_floor = model.m_F - model.gamma_norm**2 - model.m0_tilde
    entries["smallness_margin"] = AuditEntry(
        "smallness_margin", margins, np.full(len(ns), m0_floor), bool(np.all(margins >= m0_floor - tol)),
        "m_n - alpha_n - beta_n against m_F - |gamma|^2 - m0_tilde",
    )
    c0 = np.array([a.constants["c0_p"] for a in asms])
    c1 = np.array([a.constants["c1_p"] for a in asms])
    c0_ref = 2.0 * max(p.rho for p in ps + [seq.base]) * np.sqrt(2 * model.meas_gamma3) * model.gamma_norm
    entries["c0_bounded"] = AuditEntry("c0_bounded", c0, np.full(len(ns), c0_ref), bool(np.all(c0 <= c0_ref * (1 + tol))), "sup_n c0_n")
    entries["c1_bounded"] = AuditEntry(
        "c1_bounded", c1, np.full(len(ns), np.sqrt(2) * model.gamma_norm**2), bool(np.ptp(c1) <= tol), "c1_n = sqrt2 |gamma|^2"
    )
    alpha = np.array([a.constants["alpha_p"] for a in asms])
    alpha_ref = np.array([p.mu * model.gamma_norm**2 for p in ps])
    entries["alpha"] = AuditEntry(
        "alpha", alpha, alpha_ref,
        bool(np.allclose(alpha, alpha_ref, rtol=tol, atol=tol) and abs(extrapolate_limit(alpha, ns) - base.constants["alpha_p"]) <= 1e-6),
        "alpha_n = mu_n |gamma|^2 and its limit",
    )

    # data-norm surrogate for compactness: ||pi v||_Y <= d0 ||v||_V
    Mpi = model.R.T @ model.M_full[np.ix_(model.free_dofs, model.free_dofs)] @ model.R + np.diag(model.D_trace)
    ratios = np.array([np.sqrt(max(v @ Mpi @ v, 0.0)) / max(model.norm_V(v), 1e-300) for v in V])
    entries["data_norm"] = AuditEntry(
        "data_norm", ratios, np.full(samples, model.d0), bool(np.all(ratios <= model.d0 * (1 + tol))),
        "||pi v||_Y / ||v||_V against d0",
    )
    # the compliance law perturbation |k_rho_n - k_rho| <= 2 |rho_n - rho|
    r = rng.uniform(-2, 2, size=200) * max(seq.base.rho, 1e-3) * 3
    kdiff = np.array([np.max(np.abs(k_rho(r, p.rho) - k_rho(r, seq.base.rho))) for p in ps])
    kref = np.array([2 * abs(p.rho - seq.base.rho) for p in ps])
    entries["compliance_law_perturbation"] = AuditEntry(
        "compliance_law_perturbation", kdiff, kref, bool(np.all(kdiff <= kref + 1e-12)), "max_r |k_rho_n(r) - k_rho(r)|"
    )
    return AuditReport(entries, [WEAK_STRONG_NOTE, "limsup values are tail extrapolations, not proofs"])
