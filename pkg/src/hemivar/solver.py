"""Fixed-point solver for discretized variational-hemivariational inequalities.

Problem: find u in K with

    <A u, v - u> + phi(u, v) - phi(u, u) + j0(u; v - u) >= f(v - u)   for all v in K.

The outer loop freezes the first argument of ``phi`` and a Clarke
subgradient ``xi`` of ``j`` at the current iterate.  What remains is the
strongly convex problem

    min_{v in K}  P_A(v) - f(v) + <xi, v> + sum_g w_g ||v_g||

solved by a projected proximal-gradient method.  Under the smallness
condition ``alpha + beta < m`` the outer map contracts with factor
``(alpha + beta) / m`` in the instance norm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal, Optional

import numpy as np
import scipy.linalg as sla

from .errors import InfeasiblePoint, InnerSolveFailed, InsufficientHistory, NonContractive, ValidationError

log = logging.getLogger(__name__)

Vector = np.ndarray

__all__ = [
    "VhiInstance",
    "SolverConfig",
    "SolveResult",
    "InnerProblem",
    "solve",
    "inner_solve",
    "check_residual",
    "contraction_factor",
]


@dataclass(frozen=True)
class VhiInstance:
    """Discrete problem data supplied as callbacks plus the structural constants.

    ``friction_groups`` is an integer array of shape (n_groups, group_size);
    ``phi_linearize(u)`` returns one weight per group so that
    ``phi(u, v) == sum_g weight_g * ||v[group_g]||``.  ``gram`` is the matrix
    of the inner product used for all norms (identity when omitted).
    ``lipschitz`` optionally bounds the Euclidean Lipschitz constant of
    ``apply_A``; without it the inner solver estimates one.
    """

    dim: int
    apply_A: Callable[[Vector], Vector]
    phi: Callable[[Vector, Vector], float]
    j_subgradient: Callable[[Vector], Vector]
    j_dir: Callable[[Vector, Vector], float]
    project_K: Callable[[Vector], Vector]
    f_pairing: Callable[[Vector], float]
    m_p: float
    alpha_p: float
    beta_p: float
    c0_p: float
    c1_p: float
    d0: float
    potential_A: Optional[Callable[[Vector], float]] = None
    phi_linearize: Optional[Callable[[Vector], Vector]] = None
    friction_groups: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=int))
    gram: Optional[np.ndarray] = None
    lipschitz: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("dim must be positive")
        if self.m_p <= 0 or self.d0 <= 0:
            raise ValidationError("m_p and d0 must be positive")
        if min(self.alpha_p, self.beta_p, self.c0_p, self.c1_p) < 0:
            raise ValidationError("alpha_p, beta_p, c0_p, c1_p must be nonnegative")
        if not self.alpha_p + self.beta_p < self.m_p:
            raise NonContractive(
                f"smallness condition alpha_p + beta_p < m_p fails: "
                f"{self.alpha_p} + {self.beta_p} >= {self.m_p}"
            )
        groups = np.asarray(self.friction_groups, dtype=int)
        if groups.ndim != 2:
            raise ValidationError("friction_groups must be a 2-D index array")
        object.__setattr__(self, "friction_groups", groups)
        if groups.size and self.phi_linearize is None:
            raise ValidationError("friction groups require phi_linearize")
        if self.gram is not None and np.shape(self.gram) != (self.dim, self.dim):
            raise ValidationError("gram matrix shape does not match dim")

    @property
    def theta(self) -> float:
        """Certified contraction factor (alpha + beta) / m."""
        return (self.alpha_p + self.beta_p) / self.m_p

    def inner(self, u: Vector, v: Vector) -> float:
        if self.gram is None:
            return float(np.dot(u, v))
        return float(u @ (self.gram @ v))

    def norm(self, v: Vector) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    @cached_property
    def _gram_factor(self):
        return sla.cho_factor(self.gram)

    def dual_norm(self, r: Vector) -> float:
        """Norm of a residual/force vector in the dual of the instance norm."""
        if self.gram is None:
            return float(np.linalg.norm(r))
        return float(np.sqrt(max(r @ sla.cho_solve(self._gram_factor, r), 0.0)))

    @cached_property
    def f_vector(self) -> Vector:
        """Representation of the linear functional ``f_pairing`` in coordinates."""
        eye = np.eye(self.dim)
        return np.array([self.f_pairing(eye[i]) for i in range(self.dim)])

    def is_feasible(self, u: Vector, tol: float = 1e-10) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.linalg.norm(self.project_K(u) - u) <= tol * (1.0 + np.linalg.norm(u)))


def validate_instance(instance: VhiInstance, samples: int = 20, seed: int = 0, scale: float = 1.0) -> list[str]:
    """Spot-check projection and strong monotonicity on random pairs.

    Returns a list of human-readable violations (empty when all checks pass).
    """
    rng = np.random.default_rng(seed)
    problems = []
    for _ in range(samples):
        x, y = rng.normal(scale=scale, size=(2, instance.dim))
        px, py = instance.project_K(x), instance.project_K(y)
        if np.linalg.norm(instance.project_K(px) - px) > 1e-10 * (1 + np.linalg.norm(px)):
            problems.append("project_K is not idempotent")
        if np.linalg.norm(px - py) > np.linalg.norm(x - y) * (1 + 1e-10):
            problems.append("project_K is expansive")
        d = x - y
        lhs = float(np.dot(instance.apply_A(x) - instance.apply_A(y), d))
        if lhs < instance.m_p * instance.inner(d, d) * (1 - 1e-9):
            problems.append("apply_A fails strong monotonicity with m_p")
    return sorted(set(problems))


@dataclass(frozen=True)
class SolverConfig:
    outer_tol: float = 1e-10
    outer_max_iter: int = 500
    inner_tol: float = 1e-12
    inner_max_iter: int = 20_000
    inner_step_rule: Literal["fixed", "backtracking"] = "fixed"
    residual_directions: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.outer_tol <= 0 or self.inner_tol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.outer_max_iter < 1 or self.inner_max_iter < 1:
            raise ValidationError("iteration caps must be at least 1")
        if self.inner_step_rule not in ("fixed", "backtracking"):
            raise ValidationError(f"unknown inner step rule {self.inner_step_rule!r}")
        if self.residual_directions < 1:
            raise ValidationError("residual_directions must be at least 1")


@dataclass
class SolveResult:
    u: Vector
    outer_iters: int
    increment_history: list[float]
    contraction_estimates: list[float]
    vi_residual: float
    converged: bool
    increment_converged: bool = False
    residual_converged: bool = False
    theta: float = float("nan")
    flags: list[str] = field(default_factory=list)


@dataclass
class InnerProblem:
    """Convex subproblem with the coupling frozen at some iterate."""

    grad: Callable[[Vector], Vector]
    project_K: Callable[[Vector], Vector]
    x0: Vector
    weights: Vector = field(default_factory=lambda: np.zeros(0))
    groups: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=int))
    energy: Optional[Callable[[Vector], float]] = None
    lipschitz: Optional[float] = None

    @classmethod
    def frozen_at(cls, instance: VhiInstance, u: Vector, x0: Optional[Vector] = None) -> "InnerProblem":
        xi = np.asarray(instance.j_subgradient(u), dtype=float)
        rhs = instance.f_vector - xi
        if instance.friction_groups.size:
            weights = np.asarray(instance.phi_linearize(u), dtype=float)
        else:
            weights = np.zeros(0)
        energy = None
        if instance.potential_A is not None:
            pot = instance.potential_A
            energy = lambda v: pot(v) - float(rhs @ v)
        return cls(
            grad=lambda v: instance.apply_A(v) - rhs,
            project_K=instance.project_K,
            x0=np.array(u if x0 is None else x0, dtype=float),
            weights=weights,
            groups=instance.friction_groups,
            energy=energy,
            lipschitz=instance.lipschitz,
        )

    def nonsmooth(self, v: Vector) -> float:
        if not self.weights.size:
            return 0.0
        return float(self.weights @ np.linalg.norm(v[self.groups], axis=1))

    def prox(self, y: Vector, t: float) -> Vector:
        """Shrink the friction groups, then project onto K.

        The composition is the exact prox of the sum when the constrained
        coordinates and the friction groups do not overlap, or when both act
        coordinatewise (scalar groups with a box constraint).
        """
        z = np.array(y, dtype=float)
        if self.weights.size:
            blocks = z[self.groups]
            nrm = np.linalg.norm(blocks, axis=1)
            tw = t * self.weights
            factor = np.where(nrm > tw, 1.0 - tw / np.where(nrm > 0, nrm, 1.0), 0.0)
            z[self.groups] = blocks * factor[:, None]
        return self.project_K(z)

    def estimate_lipschitz(self, iters: int = 40, seed: int = 0) -> float:
        """Power iteration on the gradient's difference map at x0."""
        rng = np.random.default_rng(seed)
        x = self.x0
        g0 = self.grad(x)
        v = rng.normal(size=x.size)
        v /= np.linalg.norm(v)
        h = 1e-6 * (1.0 + np.linalg.norm(x))
        lam = 0.0
        for _ in range(iters):
            w = (self.grad(x + h * v) - g0) / h
            lam = float(np.linalg.norm(w))
            if lam == 0.0:
                break
            v = w / lam
        return max(lam, 1e-12)


def _residual(p: InnerProblem, x: Vector, L: float) -> float:
    return float(np.linalg.norm(x - p.prox(x - p.grad(x) / L, 1.0 / L)))


def inner_solve(
    p: InnerProblem,
    tol: float,
    max_iter: int,
    step_rule: str = "fixed",
    history: Optional[list] = None,
) -> Vector:
    """Projected proximal-gradient solve of the frozen convex problem.

    ``fixed`` uses step 1/L (accelerated, with adaptive restart); L comes from
    the problem or a power-iteration estimate and is doubled whenever the
    gradient Lipschitz check fails.  ``backtracking`` runs the plain proximal
    gradient method with an Armijo-type test on the energy; objective values
    are appended to ``history`` and decrease monotonically.

    Returns w with ``||w - prox_step(w)|| <= tol``.  Raises InnerSolveFailed
    when ``max_iter`` is exhausted.
    """
    x = p.project_K(np.array(p.x0, dtype=float))
    if step_rule == "backtracking":
        return _prox_grad_backtracking(p, x, tol, max_iter, history)
    if step_rule != "fixed":
        raise ValidationError(f"unknown step rule {step_rule!r}")

    certified = p.lipschitz is not None
    L = p.lipschitz if certified else 1.5 * p.estimate_lipschitz()
    y = x.copy()
    t = 1.0
    for it in range(max_iter):
        gy = p.grad(y)
        while True:
            x_new = p.prox(y - gy / L, 1.0 / L)
            d = x_new - y
            dn = np.linalg.norm(d)
            if certified or dn == 0.0:
                break
            if np.linalg.norm(p.grad(x_new) - gy) <= L * dn * (1.0 + 1e-10):
                break
            L *= 2.0
        if dn <= tol:
            res = _residual(p, x_new, L)
            if res <= tol:
                return x_new
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # gradient-based adaptive restart keeps the method monotone in practice
        if np.dot(y - x_new, x_new - x) > 0.0:
            t_new = 1.0
            y = x_new.copy()
        else:
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
    raise InnerSolveFailed(f"inner solve hit {max_iter} iterations (residual {_residual(p, x, L):.3e} > {tol:.1e})")


def _prox_grad_backtracking(p: InnerProblem, x: Vector, tol: float, max_iter: int, history):
    if p.energy is None:
        raise ValidationError("backtracking needs potential_A on the instance")
    L = p.lipschitz if p.lipschitz is not None else p.estimate_lipschitz()
    fx = p.energy(x)
    if history is not None:
        history.append(fx + p.nonsmooth(x))
    for _ in range(max_iter):
        g = p.grad(x)
        while True:
            x_new = p.prox(x - g / L, 1.0 / L)
            d = x_new - x
            f_new = p.energy(x_new)
            if f_new <= fx + g @ d + 0.5 * L * (d @ d) + 1e-14 * (1.0 + abs(fx)):
                break
            L *= 2.0
        if history is not None:
            history.append(f_new + p.nonsmooth(x_new))
        x, fx = x_new, f_new
        if np.linalg.norm(d) <= tol:
            return x
        L *= 0.9
    raise InnerSolveFailed(f"inner solve hit {max_iter} iterations")


def _is_single_point(instance: VhiInstance, u: Vector) -> bool:
    rng = np.random.default_rng(12345)
    for _ in range(2):
        probe = instance.project_K(u + 1e3 * rng.normal(size=instance.dim))
        if np.linalg.norm(probe - u) > 1e-14 * (1.0 + np.linalg.norm(u)):
            return False
    return True


def solve(instance: VhiInstance, config: SolverConfig = SolverConfig(), u0: Optional[Vector] = None) -> SolveResult:
    """Outer Banach fixed-point iteration.

    The returned result has ``converged=False`` when the outer cap is hit;
    it then carries the last iterate.
    """
    if not instance.alpha_p + instance.beta_p < instance.m_p:
        raise NonContractive("smallness condition alpha_p + beta_p < m_p fails")
    u = instance.project_K(np.zeros(instance.dim) if u0 is None else np.array(u0, dtype=float))
    theta = instance.theta

    if _is_single_point(instance, u):
        res = check_residual(instance, u, config.residual_directions, config.seed)
        return SolveResult(u, 0, [], [], res, True, True, True, theta)

    incs: list[float] = []
    ratios: list[float] = []
    flags: list[str] = []
    inner_tol = config.inner_tol
    res = float("inf")
    converged = inc_ok = res_ok = False
    k = 0
    for k in range(1, config.outer_max_iter + 1):
        problem = InnerProblem.frozen_at(instance, u)
        # inexact outer steps: the inner accuracy follows the last increment
        # and reaches inner_tol once the iteration is near its fixed point
        tol_k = inner_tol if not incs else max(inner_tol, min(1e-6, 1e-5 * incs[-1]))
        w = inner_solve(problem, tol_k, config.inner_max_iter, config.inner_step_rule)
        inc = instance.norm(w - u)
        if incs:
            ratios.append(inc / incs[-1] if incs[-1] > 0 else 0.0)
        incs.append(inc)
        u = w
        if inc <= config.outer_tol:
            inc_ok = True
            res = check_residual(instance, u, config.residual_directions, config.seed)
            res_ok = res <= 10.0 * config.outer_tol
            if res_ok:
                converged = True
                break
            # increments stalled above the residual target: sharpen the inner solve
            inner_tol = max(inner_tol * 0.1, 1e-16)
    else:
        res = check_residual(instance, u, config.residual_directions, config.seed)
        log.warning("outer iteration cap %d reached (last increment %.3e)", config.outer_max_iter, incs[-1])

    pre = [r for r in ratios[: max(len(ratios) // 2, 0)] if incs and r > theta + 0.05]
    if pre:
        flags.append(f"{len(pre)} pre-asymptotic increment ratios exceed theta={theta:.3f}")
    return SolveResult(
        u=u,
        outer_iters=k,
        increment_history=incs,
        contraction_estimates=ratios,
        vi_residual=res,
        converged=converged,
        increment_converged=inc_ok,
        residual_converged=res_ok,
        theta=theta,
        flags=flags,
    )


def _violations(instance: VhiInstance, u: Vector, vs: np.ndarray) -> np.ndarray:
    Au = instance.apply_A(u)
    f = instance.f_vector
    phi_uu = instance.phi(u, u)
    out = np.empty(len(vs))
    for i, v in enumerate(vs):
        d = v - u
        lhs = float(Au @ d) + instance.phi(u, v) - phi_uu + instance.j_dir(u, d)
        out[i] = float(f @ d) - lhs
    return out


def check_residual(instance: VhiInstance, u: Vector, n_directions: int = 8, seed: int = 0) -> float:
    """Largest sampled violation of the inequality at ``u``.

    Test points are ``project_K(u + t d)`` for every coordinate direction
    ``d = +-e_i``, ``n_directions`` random unit directions and steps
    ``t in {1e-2, 1e-1, 1}``.  Raises InfeasiblePoint if ``u`` is not in K.
    """
    if n_directions < 1:
        raise ValidationError("n_directions must be at least 1")
    u = np.asarray(u, dtype=float)
    if not instance.is_feasible(u):
        raise InfeasiblePoint("point lies outside K; residual is undefined")
    rng = np.random.default_rng(seed)
    eye = np.eye(instance.dim)
    rand = rng.normal(size=(n_directions, instance.dim))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    dirs = np.vstack([eye, -eye, rand])
    vs = np.array([instance.project_K(u + t * d) for t in (1e-2, 1e-1, 1.0) for d in dirs])
    return float(max(0.0, _violations(instance, u, vs).max()))


def contraction_factor(result: SolveResult, noise_floor: float = 1e-7) -> float:
    """Geometric-mean increment ratio over the last half of the history.

    Increments below ``noise_floor`` times the largest one are dropped first:
    there the inner solver's accuracy, not the outer map, sets the ratio.
    """
    h = result.increment_history
    if len(h) >= 2 and h[-1] == 0.0:
        # exact fixed point reached: the map collapsed in one step
        return 0.0
    if len(h) < 3:
        raise InsufficientHistory(f"need at least 3 outer iterations, have {len(h)}")
    top = max(h)
    cut = next((i for i, x in enumerate(h) if x < noise_floor * top), len(h))
    if cut >= 3:
        h = h[:cut]
    tail = h[len(h) // 2 :]
    if len(tail) < 2:
        tail = h[-2:]
    if tail[0] == 0.0 or tail[-1] == 0.0:
        return 0.0
    return float((tail[-1] / tail[0]) ** (1.0 / (len(tail) - 1)))
