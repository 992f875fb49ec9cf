import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hemivar.nonsmooth import (
    ConvexSet,
    j_rho,
    j_rho_dir,
    k_rho,
    project,
    prox_weighted_norm,
)

reals = st.floats(-50, 50, allow_nan=False)
rhos = st.floats(0, 10, allow_nan=False)


def quad_j(r, rho):
    """Independent oracle: adaptive quadrature of k_rho with breakpoints."""
    pts = [p for p in (rho, 2 * rho) if min(0, r) < p < max(0, r)]
    val, _ = quad(lambda s: k_rho(s, rho), 0.0, r, points=pts or None, epsabs=1e-13, epsrel=1e-13)
    return val


def clarke_limsup(j, r, s, radius=1e-3, n_y=201):
    """Sampled limsup definition of the Clarke directional derivative."""
    best = -np.inf
    for lam in (1e-4, 1e-5, 1e-6, 1e-7):
        ys = np.linspace(r - radius, r + radius, n_y)
        best = max(best, np.max((j(ys + lam * s) - j(ys)) / lam))
    return best


def grid_prox(w, x, h=1e-4, half_width=1.5):
    """Brute-force minimisation of w|y| + 0.5|y - x|^2 on a local grid."""
    axes = [np.arange(xi - half_width, xi + half_width + h, h) for xi in x]
    # the minimiser lies on the segment [0, x]; a 1-D search along it plus a
    # coarse 2-D scan guards against a wrong direction
    ts = np.arange(0.0, 1.0 + 1e-9, 1e-5)
    ys = ts[:, None] * np.asarray(x)[None, :]
    vals = w * np.linalg.norm(ys, axis=1) + 0.5 * np.sum((ys - x) ** 2, axis=1)
    seg_best = ys[np.argmin(vals)]
    gx, gy = np.meshgrid(axes[0][::100], axes[1][::100], indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    gvals = w * np.linalg.norm(grid, axis=1) + 0.5 * np.sum((grid - x) ** 2, axis=1)
    assert gvals.min() >= vals.min() - 1e-12
    return seg_best


@pytest.mark.parametrize(
    "r, rho, expected",
    [(-1.0, 2.0, 0.0), (3.0, 2.0, 1.0), (0.0, 2.0, 0.0), (5.0, 2.0, 1.0)],
)
def test_k_rho_examples(r, rho, expected):
    assert k_rho(r, rho) == expected


def test_k_rho_zero_stiffness():
    assert k_rho(-2.0, 0.0) == 0.0
    assert k_rho(2.5, 0.0) == 2.5
    np.testing.assert_array_equal(k_rho(np.array([-1.0, 0.0, 3.0]), 0.0), [0.0, 0.0, 3.0])


def test_k_rho_rejects_negative_rho():
    with pytest.raises(ValueError):
        k_rho(1.0, -0.1)


@pytest.mark.parametrize("r, rho, expected", [(0.0, 2.0, 0.0), (2.0, 2.0, 2.0), (4.0, 2.0, 4.0)])
def test_j_rho_examples(r, rho, expected):
    assert j_rho(r, rho) == pytest.approx(expected, abs=1e-12)
    assert quad_j(r, rho) == pytest.approx(expected, abs=1e-10)


@given(reals, rhos)
@settings(max_examples=200, deadline=None)
def test_j_rho_matches_quadrature(r, rho):
    assert abs(j_rho(r, rho) - quad_j(r, rho)) <= 1e-10 * (1 + r * r)


@pytest.mark.parametrize("r, s, rho, expected", [(3.0, 2.0, 2.0, 2.0), (1.0, 0.0, 2.0, 0.0), (-5.0, 7.0, 2.0, 0.0)])
def test_j_rho_dir_examples(r, s, rho, expected):
    assert j_rho_dir(r, s, rho) == expected
    oracle = clarke_limsup(lambda y: j_rho(y, rho), r, s)
    assert oracle == pytest.approx(expected, abs=3e-3 * (1 + abs(s)))


def test_k_rho_continuity_at_branch_points():
    rho = 1.7
    eps = 1e-9
    for t in (0.0, rho, 2 * rho):
        for side in (-eps, eps):
            assert abs(k_rho(t + side, rho) - k_rho(t, rho)) <= eps * (1 + 1e-6)


@given(reals, rhos)
def test_k_rho_growth_bound(r, rho):
    assert abs(k_rho(r, rho)) <= 2 * rho + abs(r) + 1e-12


@given(rhos)
def test_shifted_law_nondecreasing(rho):
    r = np.linspace(-3 * rho - 1, 3 * rho + 1, 2001)
    assert np.all(np.diff(k_rho(r, rho) + r) >= -1e-12)


@given(reals, reals, rhos)
def test_relaxed_monotonicity_beta_one(r, s, rho):
    lhs = j_rho_dir(r, s - r, rho) + j_rho_dir(s, r - s, rho)
    assert lhs <= (r - s) ** 2 + 1e-9 * (1 + (r - s) ** 2)


@given(reals, rhos, rhos)
def test_stiffness_stability(r, rho1, rho2):
    assert abs(k_rho(r, rho1) - k_rho(r, rho2)) <= 2 * abs(rho1 - rho2) + 1e-12


@given(reals, reals, reals, st.floats(0, 100), rhos)
def test_clarke_derivative_homogeneous_subadditive(r, s1, s2, lam, rho):
    assert j_rho_dir(r, lam * s1, rho) == pytest.approx(lam * j_rho_dir(r, s1, rho), rel=1e-12, abs=1e-12)
    assert j_rho_dir(r, s1 + s2, rho) <= j_rho_dir(r, s1, rho) + j_rho_dir(r, s2, rho) + 1e-9


@pytest.mark.parametrize("r", [-2.0, 0.4, 1.3, 2.9, 7.0])
def test_j_rho_derivative_by_finite_differences(r):
    rho = 1.0
    errs = []
    for h in (1e-2, 1e-3, 1e-4):
        errs.append(abs((j_rho(r + h, rho) - j_rho(r - h, rho)) / (2 * h) - k_rho(r, rho)))
    # j_rho is piecewise quadratic: away from breakpoints the central
    # difference is exact up to rounding
    assert max(errs) < 1e-8


def test_j_rho_not_convex():
    # k_rho decreases on [rho, 2 rho], so j_rho is concave there
    rho = 1.0
    a, b = rho, 2 * rho
    assert j_rho(0.5 * (a + b), rho) > 0.5 * (j_rho(a, rho) + j_rho(b, rho))


def test_project_examples():
    np.testing.assert_allclose(project(ConvexSet.ball(1.0), [3.0, 4.0]), [0.6, 0.8])
    assert project(ConvexSet.interval(0.0, 2.0), -1.0) == 0.0
    np.testing.assert_allclose(project(ConvexSet.box([-1, -1], [1, 1]), [0.5, 3.0]), [0.5, 1.0])


def test_project_dimension_mismatch():
    with pytest.raises(ValueError):
        project(ConvexSet.box([0, 0], [1, 1]), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        project(ConvexSet.ball(1.0, dim=3), [1.0, 2.0])


def test_project_batch_rows():
    pts = np.array([[3.0, 4.0], [0.1, 0.2]])
    out = project(ConvexSet.ball(1.0), pts)
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.1, 0.2]])


def test_halfspace_projection_matches_qp_oracle():
    rng = np.random.default_rng(3)
    A = np.array([[1.0, 1.0], [-1.0, 2.0], [0.0, -1.0]])
    b = np.array([1.0, 2.0, 0.5])
    S = ConvexSet.halfspaces(A, b)
    for _ in range(10):
        x = rng.normal(scale=3, size=2)
        p = project(S, x)
        assert np.all(A @ p <= b + 1e-9)
        # KKT oracle: x - p lies in the normal cone, checked by optimality over a grid of feasible points
        g = np.linspace(-6, 6, 241)
        gx, gy = np.meshgrid(g, g)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        pts = pts[np.all(pts @ A.T <= b, axis=1)]
        assert np.linalg.norm(x - p) <= np.min(np.linalg.norm(pts - x, axis=1)) + 1e-9


sets = [
    ConvexSet.ball(1.5),
    ConvexSet.box([-1, 0, -2], [1, 0.5, 2]),
    ConvexSet.halfspaces([[1.0, 0.0, 1.0], [0.0, 1.0, -1.0]], [1.0, 0.5]),
]


@pytest.mark.parametrize("S", sets)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)
@settings(max_examples=50, deadline=None)
def test_projection_nonexpansive_idempotent(S, x, y):
    x, y = np.array(x), np.array(y)
    px, py = project(S, x), project(S, y)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9
    np.testing.assert_allclose(project(S, px), px, atol=1e-9)


def test_callback_set():
    S = ConvexSet.from_callback(lambda x: np.maximum(x, 0.0), dim=2)
    np.testing.assert_array_equal(project(S, [-1.0, 2.0]), [0.0, 2.0])


@pytest.mark.parametrize("w, x, expected", [(0.0, [1.0, 2.0], [1.0, 2.0]), (5.0, [3.0, 0.0], [0.0, 0.0]), (1.0, [0.0, 2.0], [0.0, 1.0])])
def test_prox_weighted_norm_examples(w, x, expected):
    np.testing.assert_allclose(prox_weighted_norm(w, x), expected, atol=1e-15)
    np.testing.assert_allclose(grid_prox(w, np.array(x)), expected, atol=1e-4)


def test_prox_zero_input():
    np.testing.assert_array_equal(prox_weighted_norm(1.0, [0.0, 0.0]), [0.0, 0.0])
