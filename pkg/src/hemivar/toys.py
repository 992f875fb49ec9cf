"""Small closed-form instances used for verification and demos.

``BoxToy`` couples a symmetric positive definite matrix with a box
constraint, a nonconvex ``sum_i c_i j_rho(v_i)`` term and a friction-like
term ``phi(u, v) = max(u_0, 0) * sum_{i>=1} b_i |v_i|``.  The structural
constants follow directly from the data:

* m     = smallest eigenvalue of M
* alpha = ||b||_2
* beta  = max_i c_i
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nonsmooth import j_rho, k_rho
from .solver import VhiInstance


@dataclass
class BoxToy:
    M: np.ndarray
    f: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    c: np.ndarray = None
    rho: float = 0.0
    b: np.ndarray = None

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        n = self.M.shape[0]
        self.f = np.broadcast_to(np.asarray(self.f, dtype=float), (n,)).copy()
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        self.c = np.zeros(n) if self.c is None else np.broadcast_to(np.asarray(self.c, dtype=float), (n,)).copy()
        self.b = np.zeros(max(n - 1, 0)) if self.b is None else np.asarray(self.b, dtype=float)

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def xi(self, u):
        return self.c * k_rho(u, self.rho)

    def instance(self) -> VhiInstance:
        M, f, lo, hi, c, rho, b = self.M, self.f, self.lower, self.upper, self.c, self.rho, self.b
        n = self.dim
        eig = np.linalg.eigvalsh(M)
        has_friction = n > 1 and np.any(b != 0)

        def phi(u, v):
            if not has_friction:
                return 0.0
            return max(u[0], 0.0) * float(b @ np.abs(v[1:]))

        return VhiInstance(
            dim=n,
            apply_A=lambda v: M @ v,
            potential_A=lambda v: 0.5 * float(v @ M @ v),
            phi=phi,
            phi_linearize=(lambda u: max(u[0], 0.0) * b) if has_friction else None,
            friction_groups=np.arange(1, n)[:, None] if has_friction else np.zeros((0, 1), dtype=int),
            j_subgradient=self.xi,
            j_dir=lambda u, w: float(self.xi(u) @ w),
            project_K=lambda v: np.clip(v, lo, hi),
            f_pairing=lambda v: float(f @ v),
            m_p=float(eig[0]),
            alpha_p=float(np.linalg.norm(b)) if has_friction else 0.0,
            beta_p=float(c.max()) if n else 0.0,
            c0_p=2.0 * rho * float(np.linalg.norm(c)),
            c1_p=float(c.max()),
            d0=1.0,
            lipschitz=float(eig[-1]),
        )

    def energy_j(self, v):
        return float(self.c @ j_rho(v, self.rho))


def random_box_toy(rng: np.random.Generator, dim: int, theta_max: float = 0.7, side: float = 1.0) -> BoxToy:
    """Random instance with smallness margin ``(alpha + beta) / m <= theta_max``.

    The box has side length ``side`` and contains the origin.
    """
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eig = rng.uniform(1.0, 3.0, size=dim)
    M = (Q * eig) @ Q.T
    M = 0.5 * (M + M.T)
    m = eig.min()
    budget = theta_max * m * rng.uniform(0.5, 1.0)
    share = rng.uniform(0.3, 0.7) if dim > 1 else 1.0
    beta = share * budget
    c = rng.uniform(0.2, 1.0, size=dim)
    c *= beta / c.max()
    if dim > 1:
        b = rng.uniform(0.2, 1.0, size=dim - 1)
        b *= (budget - beta) / np.linalg.norm(b)
    else:
        b = np.zeros(0)
    lower = -rng.uniform(0.1, 0.5, size=dim) * side
    upper = lower + side
    f = rng.uniform(-1.5, 1.5, size=dim) * m
    rho = rng.uniform(0.05, 0.4)
    return BoxToy(M=M, f=f, lower=lower, upper=upper, c=c, rho=rho, b=b)


def scalar_compliance_toy(theta: float, m: float = 1.0, rho: float = 1.0) -> BoxToy:
    """1-DOF problem whose solution sits on the decreasing branch of k_rho.

    With A = m, j = beta * j_rho and f chosen so that u* = 1.5 * rho, the
    outer map is locally u -> (f - beta * k_rho(u)) / m with slope exactly
    theta = beta / m.
    """
    beta = theta * m
    u_star = 1.5 * rho
    f = m * u_star + beta * k_rho(u_star, rho)
    return BoxToy(M=[[m]], f=[f], lower=[-10.0 * rho], upper=[10.0 * rho], c=[beta], rho=rho)
