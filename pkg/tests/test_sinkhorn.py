import numpy as np
import pytest

from conftest import random_atoms, raster
from wspline.errors import NoConvergence
from wspline.measures import Atoms, DiscreteMeasure, Grid2, moments
from wspline.ot_exact import wasserstein2_exact_small
from wspline.sinkhorn import (
    GridKernel,
    apply_gibbs_kernel,
    entropic_barycenter,
    sinkhorn_distance,
    sinkhorn_grad_weights,
    transport_plan,
)


def test_self_divergence_zero():
    mu = DiscreteMeasure(Grid2(12, 12), np.ones((12, 12)))
    cost, _ = sinkhorn_distance(mu, mu, 1e-2)
    assert abs(cost) <= 1e-7


def test_cost_approaches_lp_monotonically(rng):
    mu = random_atoms(rng, 5)
    nu = random_atoms(rng, 5)
    exact, _ = wasserstein2_exact_small(mu, nu)
    pts = np.concatenate([mu.points, nu.points])
    diam2 = float(np.ptp(pts)) ** 2
    gaps = [abs(sinkhorn_distance(mu, nu, e * diam2)[0] - exact) for e in (0.1, 0.01, 0.001)]
    assert gaps[0] >= gaps[1] >= gaps[2]
    assert gaps[2] <= 5 * 1e-3 * diam2 * np.log(5)


def test_eps_ladder_gap_shrinks(rng):
    mu, nu = random_atoms(rng, 30, 2), random_atoms(rng, 25, 2)
    exact, _ = wasserstein2_exact_small(mu, nu)
    gaps = [abs(sinkhorn_distance(mu, nu, e * 2.0)[0] - exact) for e in (1e-1, 3e-2, 1e-2, 3e-3)]
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))


def test_gaussians_on_grid_mean_term():
    a = raster([0.3, 0.5], 0.1, 65)
    b = raster([0.7, 0.5], 0.1, 65)
    cost, state = sinkhorn_distance(a, b, 5e-4)
    assert cost == pytest.approx(0.16, rel=0.05)
    assert all(x >= y for x, y in zip(state.history, state.history[1:]))


def test_plan_marginals(rng):
    mu, nu = random_atoms(rng, 5, 2), random_atoms(rng, 6, 2)
    _, state = sinkhorn_distance(mu, nu, 0.05, tol=1e-10)
    P = transport_plan(state)
    assert np.allclose(P.sum(1), mu.weights, atol=1e-9)
    assert np.allclose(P.sum(0), nu.weights, atol=1e-12)


def test_no_convergence_raises(rng):
    mu, nu = random_atoms(rng, 5, 2), random_atoms(rng, 5, 2)
    with pytest.raises(NoConvergence):
        sinkhorn_distance(mu, nu, 1e-4, tol=1e-14, max_iter=3)


def test_gradient_zero_for_equal_measures():
    mu = raster([0.4, 0.6], 0.12, 20)
    # the residual gradient is the potential error, which shrinks with tol
    for tol in (1e-7, 1e-9):
        _, state = sinkhorn_distance(mu, mu, 5e-3, tol=tol, max_iter=100_000)
        assert np.max(np.abs(sinkhorn_grad_weights(state))) <= 100 * tol


def test_gradient_finite_difference(rng):
    mu, nu = random_atoms(rng, 5, 2), random_atoms(rng, 5, 2)
    eps = 0.02
    _, state = sinkhorn_distance(mu, nu, eps, tol=1e-12, max_iter=100_000)
    g = sinkhorn_grad_weights(state)
    d = rng.standard_normal(5)
    d -= d.mean()
    h = 1e-5

    def J(w):
        return sinkhorn_distance(Atoms(mu.points, w), nu, eps, tol=1e-12, max_iter=100_000)[0]

    fd = (J(mu.weights + h * d) - J(mu.weights - h * d)) / (2 * h)
    assert fd == pytest.approx(float(g @ d), rel=1e-3)


def test_gradient_mirror_antisymmetry():
    # nu is mu reflected about x = 1/2: the source gradient of mu mirrors the target gradient of nu
    a = raster([0.3, 0.5], [0.08, 0.1], 24)
    b = DiscreteMeasure(a.grid, a.weights[::-1])
    _, s1 = sinkhorn_distance(a, b, 2e-3)
    gs = sinkhorn_grad_weights(s1, "source")
    gt = sinkhorn_grad_weights(s1, "target")
    assert np.allclose(gs, gt[::-1], atol=1e-6)


def test_barycenter_t0_is_input():
    a, b = raster([0.3, 0.5], 0.08, 33), raster([0.7, 0.5], 0.08, 33)
    bar = entropic_barycenter(a, b, 0.0, 1e-3)
    assert 0.5 * np.abs(bar.result.weights - a.weights).sum() <= 1e-3


@pytest.mark.parametrize("s1,s2", [(0.1, 0.1), (0.05, 0.15)])
def test_barycenter_moments(s1, s2):
    a, b = raster([0.3, 0.5], s1, 65), raster([0.7, 0.5], s2, 65)
    bar = entropic_barycenter(a, b, 0.5, 5e-4)
    m, C = moments(bar.result)
    assert m[0] == pytest.approx(0.5, rel=0.05)
    assert np.sqrt(C[0, 0]) == pytest.approx(0.5 * (s1 + s2), rel=0.05)


def test_kernel_delta_column():
    g = Grid2(9, 9)
    v = np.zeros(g.shape)
    v[4, 4] = 1.0
    out = apply_gibbs_kernel(v, 0.05, g)
    c = g.centers()
    assert np.allclose(out, np.exp(-np.sum((c - c[4, 4]) ** 2, -1) / 0.05), rtol=1e-12)


def test_kernel_matches_dense(rng):
    g = Grid2(8, 8)
    v = rng.random(g.shape)
    pts = g.centers().reshape(-1, 2)
    Kd = np.exp(-np.sum((pts[:, None] - pts[None]) ** 2, -1) / 0.03)
    assert np.allclose(apply_gibbs_kernel(v, 0.03, g).ravel(), Kd @ v.ravel(), rtol=1e-12, atol=1e-14)


def test_log_kernel_fallback_exact(rng):
    g = Grid2(16, 16)
    k = GridKernel(g, 1e-4)
    h = rng.standard_normal(g.shape) * 50
    assert np.allclose(k.log_apply(h), k.log_apply_exact(h), rtol=1e-10, atol=1e-10)
