"""Scalar nonsmooth primitives and convex projections.

``k_rho`` is the (non-monotone) normal compliance law, ``j_rho`` its
potential and ``j_rho_dir`` the Clarke directional derivative of
``j_rho``.  Since ``j_rho`` is C^1 the generalized derivative is simply
``k_rho(r) * s``.

All functions accept scalars or numpy arrays and broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

__all__ = [
    "k_rho",
    "j_rho",
    "j_rho_dir",
    "ConvexSet",
    "project",
    "prox_weighted_norm",
]


def _check_rho(rho):
    if np.any(np.asarray(rho) < 0):
        raise ValueError(f"stiffness coefficient must be nonnegative, got {rho}")


def k_rho(r, rho):
    """Piecewise-linear compliance law.

    0 for r < 0, r on [0, rho), 2 rho - r on [rho, 2 rho), r - 2 rho beyond.
    Ties at the branch points go to the branch listed first; the function is
    continuous there, so the value does not depend on the choice.
    """
    _check_rho(rho)
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 0 and rho == 0.0:
        out = np.where(r < 0.0, 0.0, r)
    else:
        out = np.select(
            [r < 0.0, r < rho, r < 2.0 * rho],
            [np.zeros_like(r), r, 2.0 * rho - r],
            default=r - 2.0 * rho,
        )
    return out if out.ndim else float(out)


def j_rho(r, rho):
    """Closed-form antiderivative of :func:`k_rho` vanishing at r = 0."""
    _check_rho(rho)
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    rho2 = rho * rho
    out = np.select(
        [r < 0.0, r < rho, r < 2.0 * rho],
        [
            np.zeros_like(r),
            0.5 * r * r,
            0.5 * rho2 + 2.0 * rho * (r - rho) - 0.5 * (r * r - rho2),
        ],
        default=rho2 + 0.5 * (r - 2.0 * rho) ** 2,
    )
    return out if out.ndim else float(out)


def j_rho_dir(r, s, rho):
    """Clarke directional derivative of j_rho at r in direction s."""
    out = np.asarray(k_rho(r, rho)) * np.asarray(s, dtype=float)
    return out if out.ndim else float(out)


SetKind = Literal["interval", "ball", "box", "halfspaces", "callback"]


@dataclass(frozen=True)
class ConvexSet:
    """Nonempty closed convex set with an exact Euclidean projection.

    Build instances through the classmethods; ``project`` dispatches on
    ``kind``.  ``dim`` is ``None`` when the set makes sense in any dimension
    (a ball centred at the origin).
    """

    kind: SetKind
    dim: Optional[int]
    params: dict = field(default_factory=dict, compare=False)

    @classmethod
    def interval(cls, a: float, b: float) -> "ConvexSet":
        if not a <= b:
            raise ValueError(f"empty interval [{a}, {b}]")
        return cls("interval", 1, {"a": float(a), "b": float(b)})

    @classmethod
    def ball(cls, radius: float, dim: Optional[int] = None) -> "ConvexSet":
        if radius < 0:
            raise ValueError("ball radius must be nonnegative")
        return cls("ball", dim, {"radius": float(radius)})

    @classmethod
    def box(cls, lower, upper) -> "ConvexSet":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or np.any(lower > upper):
            raise ValueError("box bounds must have equal shape and lower <= upper")
        return cls("box", lower.size, {"lower": lower, "upper": upper})

    @classmethod
    def halfspaces(cls, A, b, tol: float = 1e-13, max_iter: int = 100_000) -> "ConvexSet":
        """Polyhedron {x : A x <= b}; projected with Dykstra's algorithm."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[0] != b.size:
            raise ValueError("A and b disagree on the number of constraints")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero row in constraint matrix")
        return cls(
            "halfspaces",
            A.shape[1],
            {"A": A / norms[:, None], "b": b / norms, "tol": tol, "max_iter": max_iter},
        )

    @classmethod
    def from_callback(cls, fn: Callable[[np.ndarray], np.ndarray], dim: Optional[int] = None) -> "ConvexSet":
        """Wrap a user-supplied projection onto a set the library does not model."""
        return cls("callback", dim, {"fn": fn})

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.abs(project(self, x) - x) <= tol * (1.0 + np.abs(x))))


def _dykstra(x, A, b, tol, max_iter):
    m = A.shape[0]
    y = x.copy()
    incr = np.zeros((m, x.size))
    for _ in range(max_iter):
        y_prev = y.copy()
        for i in range(m):
            z = y + incr[i]
            viol = A[i] @ z - b[i]
            y = z - max(viol, 0.0) * A[i]
            incr[i] = z - y
        if np.linalg.norm(y - y_prev) <= tol * (1.0 + np.linalg.norm(y)):
            break
    return y


def project(set: ConvexSet, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``set``.

    ``x`` may be a batch: the last axis is the vector axis and every row is
    projected independently.
    """
    x = np.asarray(x, dtype=float)
    if set.kind == "interval":
        if x.ndim and x.shape[-1] != 1:
            raise ValueError(f"interval projection expects scalars, got shape {x.shape}")
        return np.clip(x, set.params["a"], set.params["b"])
    if x.ndim == 0:
        raise ValueError(f"{set.kind} projection expects a vector")
    if set.dim is not None and x.shape[-1] != set.dim:
        raise ValueError(f"dimension mismatch: set has dim {set.dim}, vector has {x.shape[-1]}")
    if set.kind == "ball":
        radius = set.params["radius"]
        nrm = np.linalg.norm(x, axis=-1, keepdims=True)
        scale = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
        return x * scale
    if set.kind == "box":
        return np.clip(x, set.params["lower"], set.params["upper"])
    if set.kind == "halfspaces":
        p = set.params
        rows = x.reshape(-1, x.shape[-1])
        out = np.array([_dykstra(row, p["A"], p["b"], p["tol"], p["max_iter"]) for row in rows])
        return out.reshape(x.shape)
    if set.kind == "callback":
        fn = set.params["fn"]
        if x.ndim == 1:
            return np.asarray(fn(x), dtype=float)
        rows = x.reshape(-1, x.shape[-1])
        return np.array([fn(row) for row in rows], dtype=float).reshape(x.shape)
    raise ValueError(f"unknown set kind {set.kind!r}")


def prox_weighted_norm(w: float, x) -> np.ndarray:
    """argmin_y  w*||y|| + 0.5*||y - x||^2  (block soft-thresholding)."""
    if w < 0:
        raise ValueError("weight must be nonnegative")
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm <= w:
        return np.zeros_like(x)
    return (1.0 - w / nrm) * x
