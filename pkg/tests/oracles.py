"""Brute-force oracles shared by the solver and acceptance tests.

Nothing here calls the fixed-point solver: inequality violations of a
``BoxToy`` are evaluated in closed form (the worst test point in a box is a
vertex or a kink of a concave piecewise-linear function) and minimised by
grid enumeration.
"""
import numpy as np

from hemivar.nonsmooth import k_rho


def box_violation(toy, U):
    """max over v in the box of the inequality violation, for each row of U."""
    U = np.atleast_2d(U)
    g = toy.f[None, :] - U @ toy.M.T - toy.c[None, :] * k_rho(U, toy.rho)
    s = np.maximum(U[:, 0], 0.0)
    total = np.zeros(len(U))
    for i in range(toy.dim):
        w = s * toy.b[i - 1] if i >= 1 and toy.b.size else np.zeros(len(U))
        cands = [toy.lower[i], toy.upper[i]]
        if toy.lower[i] <= 0.0 <= toy.upper[i]:
            cands.append(0.0)
        best = np.full(len(U), -np.inf)
        for v in cands:
            val = g[:, i] * (v - U[:, i]) - w * (abs(v) - np.abs(U[:, i]))
            best = np.maximum(best, val)
        total += best
    return np.maximum(total, 0.0)


def _grid(lo, hi, h):
    return np.arange(lo, hi + 0.5 * h, h)


def _eval_grid(toy, axes, chunk=400_000):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.concatenate([box_violation(toy, pts[i : i + chunk]) for i in range(0, len(pts), chunk)])
    return pts, vals


def grid_minimizer(toy, h=1e-3, coarse=1e-2, n_seeds=5):
    """Grid point with the smallest violation.

    Dimensions 1 and 2 use the full grid of step ``h``; dimension 3 scans a
    ``coarse`` grid first and then the fine grid around the best seeds.
    """
    if toy.dim <= 2:
        axes = [_grid(toy.lower[i], toy.upper[i], h) for i in range(toy.dim)]
        pts, vals = _eval_grid(toy, axes)
        return pts[np.argmin(vals)], vals.min()
    axes = [_grid(toy.lower[i], toy.upper[i], coarse) for i in range(toy.dim)]
    pts, vals = _eval_grid(toy, axes)
    seeds = pts[np.argsort(vals)[:n_seeds]]
    best_pt, best_val = None, np.inf
    for seed in seeds:
        axes = [
            _grid(max(toy.lower[i], seed[i] - 2 * coarse), min(toy.upper[i], seed[i] + 2 * coarse), h)
            for i in range(toy.dim)
        ]
        p, v = _eval_grid(toy, axes)
        k = np.argmin(v)
        if v[k] < best_val:
            best_pt, best_val = p[k], v[k]
    return best_pt, best_val


def max_violation_over_grid(toy, u, h=1e-3):
    """Evaluate the inequality at u for every test point v of a grid over the box."""
    axes = [_grid(toy.lower[i], toy.upper[i], h) for i in range(toy.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    V = np.stack([m.ravel() for m in mesh], axis=1)
    g = toy.f - toy.M @ u - toy.c * k_rho(u, toy.rho)
    viol = (V - u) @ g
    if toy.dim > 1 and toy.b.size:
        s = max(u[0], 0.0)
        viol -= s * (np.abs(V[:, 1:]) @ toy.b - np.abs(u[1:]) @ toy.b)
    return float(viol.max())
