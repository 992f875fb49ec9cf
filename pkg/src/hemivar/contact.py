"""Finite-element frictional contact problem with nonmonotone normal compliance.

An elastic body is clamped on one boundary part and may touch a rigid
foundation covered by a deformable layer of thickness ``g`` on the contact
part.  The discrete problem is a variational-hemivariational inequality on
the free degrees of freedom:

* K_p   = {v : v_nu <= g at every contact node}
* A_p u = elastic stress + omega * (eps(u) - P_B eps(u)), paired with eps(v)
* phi_p(u, v) = mu * sum_i w_i max(u_nu,i, 0) |v_tau,i|
* j_p(v)      = sum_i w_i j_rho(v_nu,i)
* f_p         = body force f0 (consistent mass) + traction f2 on the contact nodes

Contact-boundary integrals use nodal (lumped) quadrature with weights
``w_i``.  The solver vector lives in a rotated basis: every free contact node
carries (tangential, normal) coordinates, so the constraint and the friction
term act on single coordinates.  The V-norm is ``||v||_V^2 = int eps(v):eps(v)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import fem
from .errors import ParameterOutsideLambda, SmallnessViolated, ValidationError
from .nonsmooth import ConvexSet, j_rho, k_rho, project
from .solver import SolverConfig, SolveResult, VhiInstance, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FemModel:
    """Mesh, material and every assembled matrix, in the rotated free basis.

    ``K`` elastic stiffness, ``G`` V-norm Gram matrix, ``S`` strain operator
    (stacked Mandel strains), ``M_vol`` body-force mass map (all nodes to free
    local dofs), ``D_trace`` diagonal of the lumped contact trace form.
    """

    mesh: fem.Mesh
    C: np.ndarray
    B: ConvexSet
    S: np.ndarray
    vol: np.ndarray
    K: np.ndarray
    G: np.ndarray
    M_vol: np.ndarray
    M_full: np.ndarray
    R: np.ndarray
    free_dofs: np.ndarray
    gamma3_nodes: np.ndarray
    gamma3_weights: np.ndarray
    gamma3_normals: np.ndarray
    gamma3_free: np.ndarray
    normal_idx: np.ndarray
    tangent_idx: np.ndarray
    D_trace: np.ndarray
    meas_gamma3: float
    m_F: float
    L_F: float
    gamma_norm: float
    d0: float
    m0_tilde: float
    lam_max_K: float
    lam_max_G: float

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    @property
    def n_strain(self) -> int:
        return self.C.shape[0]

    def norm_V(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(max(v @ self.G @ v, 0.0)))

    def trace_l2(self, v) -> float:
        """L2 norm of the boundary trace on the contact part."""
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(v @ (self.D_trace * v)))

    def to_nodal(self, u) -> np.ndarray:
        """Displacement in global components at every node, shape (n_nodes, d)."""
        full = np.zeros(self.mesh.n_nodes * self.dim)
        full[self.free_dofs] = self.R @ np.asarray(u, dtype=float)
        return full.reshape(-1, self.dim)

    def normal_trace(self, u) -> np.ndarray:
        """u_nu at every contact-boundary node (zero at clamped ones)."""
        out = np.zeros(len(self.gamma3_nodes))
        out[self.gamma3_free] = np.asarray(u)[self.normal_idx]
        return out

    def tangential_trace(self, u) -> np.ndarray:
        out = np.zeros(len(self.gamma3_nodes))
        if self.tangent_idx.size:
            out[self.gamma3_free] = np.asarray(u)[self.tangent_idx]
        return out

    def l2_omega(self, f0) -> float:
        f = np.asarray(f0, dtype=float).ravel()
        return float(np.sqrt(max(f @ self.M_full @ f, 0.0)))

    def l2_gamma3(self, f2) -> float:
        f = np.asarray(f2, dtype=float).reshape(len(self.gamma3_nodes), -1)
        return float(np.sqrt(np.sum(self.gamma3_weights[:, None] * f * f)))


@dataclass(frozen=True)
class ParameterVector:
    """p = (omega, mu, rho, g, f0, f2).

    ``f0`` is a nodal body-force field of shape (n_nodes, d) and ``f2`` a
    nodal traction on the contact nodes, shape (n_contact, d); a length-d
    vector or a scalar is broadcast when the parameters are assembled.
    """

    omega: float = 0.0
    mu: float = 0.0
    rho: float = 0.0
    g: float = 0.0
    f0: object = 0.0
    f2: object = 0.0

    def fields(self, model: FemModel):
        d = model.dim
        f0 = np.broadcast_to(np.asarray(self.f0, dtype=float), (model.mesh.n_nodes, d)).copy()
        f2 = np.broadcast_to(np.asarray(self.f2, dtype=float), (len(model.gamma3_nodes), d)).copy()
        return f0, f2


SYMBOLS = {"omega": "ω", "mu": "μ", "rho": "ρ", "g": "g"}


def lambda_violations(model: FemModel, p: ParameterVector) -> list[str]:
    """Admissibility constraints that ``p`` violates, named as in the model.

    ω, μ, ρ ≥ 0 and μ‖γ‖² ≤ m̃₀ define Λ; the thickness bound g ≥ 0 belongs to
    the control set U.
    """
    out = []
    for name in ("omega", "mu", "rho"):
        if getattr(p, name) < 0:
            out.append(f"{SYMBOLS[name]} ≥ 0 (set Λ)")
    if p.g < 0:
        out.append("g ≥ 0 (set U)")
    gamma2 = model.gamma_norm**2
    if p.mu * gamma2 > model.m0_tilde:
        out.append(f"μ‖γ‖² ≤ m̃₀ (set Λ): {p.mu}·{gamma2:.6g} > {model.m0_tilde:.6g}")
    return out


def z_distance(model: FemModel, p: ParameterVector, q: ParameterVector) -> float:
    """|d omega| + |d mu| + |d rho| + |d g| + ||d f0||_L2(Omega) + ||d f2||_L2(Gamma3)."""
    f0p, f2p = p.fields(model)
    f0q, f2q = q.fields(model)
    return (
        abs(p.omega - q.omega)
        + abs(p.mu - q.mu)
        + abs(p.rho - q.rho)
        + abs(p.g - q.g)
        + model.l2_omega(f0p - f0q)
        + model.l2_gamma3(f2p - f2q)
    )


def _rotation(mesh, free_dofs, g3_nodes, g3_normals, g3_free):
    """Orthogonal map from local (tangential, normal) coordinates to global free dofs."""
    d = mesh.dim
    n = len(free_dofs)
    pos = {int(dof): i for i, dof in enumerate(free_dofs)}
    R = np.eye(n)
    normal_idx, tangent_idx = [], []
    for node, nrm in zip(g3_nodes[g3_free], g3_normals[g3_free]):
        if d == 1:
            i = pos[int(node)]
            R[i, i] = nrm[0]
            normal_idx.append(i)
        else:
            ix, iy = pos[2 * int(node)], pos[2 * int(node) + 1]
            tau = np.array([-nrm[1], nrm[0]])
            # local slot ix carries the tangential coordinate, slot iy the normal one
            R[np.ix_([ix, iy], [ix, iy])] = np.column_stack([tau, nrm])
            tangent_idx.append(ix)
            normal_idx.append(iy)
    return R, np.array(normal_idx, dtype=int), np.array(tangent_idx, dtype=int)


def _power_iteration(H: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    if H.size == 0:
        return 0.0
    x = np.ones(H.shape[0]) + 1e-3 * np.arange(H.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = H @ x
        lam_new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    log.warning("power iteration did not reach tolerance %.1e", tol)
    return lam


def trace_norm(model: FemModel) -> float:
    """Operator norm of the contact trace map from (V, ||.||_V) to L2(Gamma3)^d."""
    return _trace_norm(model.G, model.D_trace)


def _trace_norm(G: np.ndarray, D: np.ndarray) -> float:
    idx = np.flatnonzero(D)
    if not idx.size:
        return 0.0
    # generalized problem D x = lam G x reduces to the contact dofs:
    # lam_max = lam_max( D_c^1/2 (G^-1)_cc D_c^1/2 )
    cf = sla.cho_factor(G)
    E = np.zeros((G.shape[0], idx.size))
    E[idx, np.arange(idx.size)] = 1.0
    H = sla.cho_solve(cf, E)[idx, :]
    s = np.sqrt(D[idx])
    lam = _power_iteration(s[:, None] * H * s[None, :])
    return float(np.sqrt(lam))


def build_model(
    mesh: fem.Mesh,
    young: Optional[float] = None,
    lame_mu: Optional[float] = None,
    lame_lambda: Optional[float] = None,
    B: Optional[ConvexSet] = None,
    m0_tilde: Optional[float] = None,
) -> FemModel:
    """Assemble the elastic model and its discrete constants.

    ``B`` defaults to the ball of radius 1 in the strain space.  ``m0_tilde``
    must satisfy ``0 < m0_tilde < m_F - |gamma|^2``; the default is
    ``0.999 * (m_F - |gamma|^2)``.
    """
    fem.check_mesh(mesh)
    d = mesh.dim
    C = fem.mandel_stiffness(d, young, lame_mu, lame_lambda)
    nm = C.shape[0]
    if B is None:
        B = ConvexSet.ball(1.0, dim=nm)
    if B.dim is not None and B.dim != nm:
        raise ValidationError(f"set B must live in the {nm}-dimensional strain space")
    if not np.allclose(project(B, np.zeros(nm)), 0.0):
        raise ValidationError("set B must contain the zero tensor")

    grads, vol = fem.element_geometry(mesh)
    S_full = fem.strain_operator(mesh, grads)
    M_full = fem.mass_matrix(mesh, vol).toarray()

    clamped_nodes = np.unique(mesh.clamped)
    fixed = np.zeros(mesh.n_nodes * d, dtype=bool)
    for c in range(d):
        fixed[d * clamped_nodes + c] = True
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.elements.ravel()] = True
    fixed |= ~np.repeat(used, d)
    free_dofs = np.flatnonzero(~fixed)

    g3_nodes, g3_w, g3_n = fem.contact_nodes(mesh)
    g3_free = ~np.isin(g3_nodes, clamped_nodes)
    R, normal_idx, tangent_idx = _rotation(mesh, free_dofs, g3_nodes, g3_n, g3_free)

    S = S_full.toarray()[:, free_dofs] @ R
    Cblk = np.kron(np.diag(vol), C)
    K = S.T @ Cblk @ S
    G = S.T @ (np.repeat(vol, nm)[:, None] * S)
    K, G = 0.5 * (K + K.T), 0.5 * (G + G.T)
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise fem.EmptyClampedBoundary("clamped boundary does not remove rigid motions") from None

    D = np.zeros(len(free_dofs))
    wf = g3_w[g3_free]
    D[normal_idx] = wf
    if tangent_idx.size:
        D[tangent_idx] = wf
    M_vol = R.T @ M_full[free_dofs, :]

    ev = sla.eigh(K, G, eigvals_only=True)
    m_F, L_F = float(ev[0]), float(ev[-1])
    gamma = _trace_norm(G, D)
    Mpi = R.T @ M_full[np.ix_(free_dofs, free_dofs)] @ R + np.diag(D)
    d0 = float(np.sqrt(sla.eigh(0.5 * (Mpi + Mpi.T), G, eigvals_only=True)[-1]))

    margin = m_F - gamma**2
    if margin <= 0:
        raise SmallnessViolated(f"m_F = {m_F:.6g} must exceed |gamma|^2 = {gamma**2:.6g}")
    if m0_tilde is None:
        m0_tilde = 0.999 * margin
    if not 0 < m0_tilde < margin:
        raise ValidationError(f"m0_tilde must lie in (0, m_F - |gamma|^2) = (0, {margin:.6g})")

    return FemModel(
        mesh=mesh,
        C=C,
        B=B,
        S=S,
        vol=vol,
        K=K,
        G=G,
        M_vol=M_vol,
        M_full=M_full,
        R=R,
        free_dofs=free_dofs,
        gamma3_nodes=g3_nodes,
        gamma3_weights=g3_w,
        gamma3_normals=g3_n,
        gamma3_free=g3_free,
        normal_idx=normal_idx,
        tangent_idx=tangent_idx,
        D_trace=D,
        meas_gamma3=float(fem.face_measures(mesh, mesh.contact).sum()),
        m_F=m_F,
        L_F=L_F,
        gamma_norm=gamma,
        d0=d0,
        m0_tilde=float(m0_tilde),
        lam_max_K=float(np.linalg.eigvalsh(K)[-1]),
        lam_max_G=float(np.linalg.eigvalsh(G)[-1]),
    )


@dataclass
class AssembledContact:
    model: FemModel
    params: ParameterVector
    instance: VhiInstance
    f_volume: np.ndarray
    f_surface: np.ndarray
    constants: dict = field(default_factory=dict)

    def strains(self, u) -> np.ndarray:
        return (self.model.S @ np.asarray(u, dtype=float)).reshape(-1, self.model.n_strain)

    def apply_A_linear(self, u) -> np.ndarray:
        return self.model.K @ np.asarray(u, dtype=float)

    def j_value(self, v) -> float:
        m = self.model
        w = m.gamma3_weights[m.gamma3_free]
        return float(w @ j_rho(np.asarray(v)[m.normal_idx], self.params.rho))


def assemble(model: FemModel, p: ParameterVector) -> AssembledContact:
    """Turn model + parameters into a solver instance."""
    bad = lambda_violations(model, p)
    if bad:
        raise ParameterOutsideLambda("; ".join(bad))
    gamma2 = model.gamma_norm**2
    if not (p.mu + 1.0) * gamma2 < model.m_F:
        raise SmallnessViolated(
            f"(mu + 1)*|gamma|^2 = {(p.mu + 1) * gamma2:.6g} must be below m_F = {model.m_F:.6g}"
        )
    omega, mu, rho, g = float(p.omega), float(p.mu), float(p.rho), float(p.g)
    S, K, vol, B, nm = model.S, model.K, model.vol, model.B, model.n_strain
    nidx, tidx = model.normal_idx, model.tangent_idx
    w = model.gamma3_weights[model.gamma3_free]
    f0, f2 = p.fields(model)
    f_vol = model.M_vol @ f0.ravel()
    surf_global = np.zeros(model.mesh.n_nodes * model.dim)
    for node, wi, fi in zip(model.gamma3_nodes, model.gamma3_weights, f2):
        surf_global[model.dim * node : model.dim * node + model.dim] += wi * fi
    f_surf = model.R.T @ surf_global[model.free_dofs]
    f_vec = f_vol + f_surf
    vol_rep = vol[:, None]

    def ω_excess(u):
        e = (S @ u).reshape(-1, nm)
        return e - project(B, e)

    if omega > 0:
        def apply_A(u):
            return K @ u + omega * (S.T @ (vol_rep * ω_excess(u)).ravel())

        def potential_A(u):
            ex = ω_excess(u)
            return 0.5 * float(u @ K @ u) + 0.5 * omega * float(np.sum(vol_rep * ex * ex))
    else:
        def apply_A(u):
            return K @ u

        def potential_A(u):
            return 0.5 * float(u @ K @ u)

    friction = model.dim == 2 and mu > 0 and tidx.size > 0

    def phi(u, v):
        if not friction:
            return 0.0
        return mu * float(w @ (np.maximum(u[nidx], 0.0) * np.abs(v[tidx])))

    def phi_linearize(u):
        return mu * w * np.maximum(u[nidx], 0.0)

    def j_subgradient(u):
        xi = np.zeros_like(u)
        xi[nidx] = w * k_rho(u[nidx], rho)
        return xi

    def j_dir(u, z):
        return float(w @ (k_rho(u[nidx], rho) * z[nidx]))

    def project_K(u):
        v = np.array(u, dtype=float)
        v[nidx] = np.minimum(v[nidx], g)
        return v

    c0 = 2.0 * rho * np.sqrt(2.0 * model.meas_gamma3) * model.gamma_norm
    c1 = np.sqrt(2.0) * gamma2
    instance = VhiInstance(
        dim=model.n_free,
        apply_A=apply_A,
        potential_A=potential_A,
        phi=phi,
        phi_linearize=phi_linearize if friction else None,
        friction_groups=tidx[:, None] if friction else np.zeros((0, 1), dtype=int),
        j_subgradient=j_subgradient,
        j_dir=j_dir,
        project_K=project_K,
        f_pairing=lambda v: float(f_vec @ v),
        m_p=model.m_F,
        alpha_p=mu * gamma2,
        beta_p=gamma2,
        c0_p=c0,
        c1_p=c1,
        d0=model.d0,
        gram=model.G,
        lipschitz=model.lam_max_K + omega * model.lam_max_G,
    )
    instance.__dict__["f_vector"] = f_vec
    constants = {
        "m_p": model.m_F,
        "L_F": model.L_F,
        "alpha_p": mu * gamma2,
        "beta_p": gamma2,
        "c0_p": c0,
        "c1_p": c1,
        "d0": model.d0,
        "gamma_norm": model.gamma_norm,
        "theta": (mu + 1.0) * gamma2 / model.m_F,
    }
    return AssembledContact(model, p, instance, f_vol, f_surf, constants)


@dataclass
class ContactSolution:
    result: SolveResult
    assembled: AssembledContact
    active_nodes: np.ndarray
    status: list[str]

    @property
    def u(self) -> np.ndarray:
        return self.result.u


def classify_contact(model: FemModel, u, g: float, tol: float = 1e-9):
    """Active-set nodes (u_nu = g) and a per-contact-node status label.

    Labels: ``clamped``, ``separated`` (u_nu <= 0, no compliance or friction),
    ``stick`` and ``slip`` (2-D only; in 1-D in-contact nodes are ``contact``).
    """
    un = model.normal_trace(u)
    ut = model.tangential_trace(u)
    active = model.gamma3_nodes[model.gamma3_free & (un >= g - tol)]
    status = []
    for i in range(len(model.gamma3_nodes)):
        if not model.gamma3_free[i]:
            status.append("clamped")
        elif un[i] <= tol:
            status.append("separated")
        elif model.dim == 1:
            status.append("contact")
        else:
            status.append("stick" if abs(ut[i]) <= tol else "slip")
    return active, status


def solve_contact(
    model: FemModel,
    p: ParameterVector,
    config: SolverConfig = SolverConfig(),
    u0: Optional[np.ndarray] = None,
) -> ContactSolution:
    asm = assemble(model, p)
    res = solve(asm.instance, config, u0)
    active, status = classify_contact(model, res.u, p.g)
    return ContactSolution(res, asm, active, status)
