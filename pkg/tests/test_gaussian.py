import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_spd
from wspline.curves import discrete_euclidean_energies
from wspline.errors import InfeasibleConstraint, NotSPD
from wspline.gaussian import (
    DiagGaussianPath,
    bures_distance2,
    clipped_spline_sample,
    diag_spline_energy,
    gaussian_barycenter,
    gaussian_espline,
    gaussian_gen_barycenter,
    gaussian_monge_map,
    polarization_term,
    sqrt2x2_spd,
    sqrtm_spd,
)
from wspline.curves import cubic_spline_interpolate
from wspline.measures import Gaussian


def G(m, s):
    return Gaussian(np.atleast_1d(m), np.atleast_2d(s))


def eig_bures(m1, S1, m2, S2):
    """Oracle: tr(S1^2 + S2^2) - 2 tr (S1 S2^2 S1)^(1/2) via eigenvalues."""
    ev = np.linalg.eigvalsh(S1 @ S2 @ S2 @ S1)
    return float(np.sum((m1 - m2) ** 2) + np.trace(S1 @ S1 + S2 @ S2) - 2 * np.sum(np.sqrt(np.clip(ev, 0, None))))


def test_bures_basic():
    g = G([0.2, 0.1], np.diag([1, 2]))
    assert bures_distance2(g, g) == pytest.approx(0.0, abs=1e-14)
    assert bures_distance2(G(0, 1), G(2, 2)) == pytest.approx(5.0, abs=1e-14)


def test_bures_rotated_vs_oracle():
    S1 = np.diag([1.0, 2.0])
    c = np.cos(np.pi / 4)
    R = np.array([[c, -c], [c, c]])
    S2 = R @ S1 @ R.T
    val = bures_distance2(G([0, 0], S1), G([0, 0], S2))
    assert abs(val - eig_bures(np.zeros(2), S1, np.zeros(2), S2)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_bures_symmetric_and_oracle(seed):
    rng = np.random.default_rng(seed)
    S1, S2 = random_spd(rng), random_spd(rng)
    m1, m2 = rng.standard_normal(2), rng.standard_normal(2)
    a, b = G(m1, S1), G(m2, S2)
    assert bures_distance2(a, b) == pytest.approx(bures_distance2(b, a), abs=1e-10)
    assert abs(bures_distance2(a, b) - eig_bures(m1, S1, m2, S2)) <= 1e-10


def test_monge_map_1d_example():
    T = gaussian_monge_map(G(0, 1), G(2, 2))
    x = np.linspace(-2, 2, 5)[:, None]
    assert np.allclose(T(x), 2 + 2 * x)
    g = G([1, 2], random_spd(np.random.default_rng(1)))
    T = gaussian_monge_map(g, g)
    assert np.allclose(T.A, np.eye(2)) and np.allclose(T.b, 0, atol=1e-12)


def test_monge_map_pushes_forward(rng):
    g1, g2 = G(rng.standard_normal(2), random_spd(rng)), G(rng.standard_normal(2), random_spd(rng))
    T = gaussian_monge_map(g1, g2)
    assert np.allclose(T.A @ g1.cov @ T.A, g2.cov, atol=1e-10)
    assert np.allclose(T.A, T.A.T) and np.linalg.eigvalsh(T.A).min() > 0


def test_barycenter_examples():
    g1, g2 = G(0, 1), G(4, 3)
    assert gaussian_barycenter(g1, g2, 0.0) is g1
    b = gaussian_barycenter(g1, g2, 0.5)
    assert b.mean[0] == pytest.approx(2.0) and b.std[0, 0] == pytest.approx(2.0)


def test_barycenter_on_geodesic(rng):
    g1, g2 = G(rng.standard_normal(2), random_spd(rng)), G(rng.standard_normal(2), random_spd(rng))
    d = bures_distance2(g1, g2)
    for t in (0.2, 0.5, 0.9):
        b = gaussian_barycenter(g1, g2, t)
        assert bures_distance2(g1, b) == pytest.approx(t * t * d, rel=1e-9)
        assert bures_distance2(b, g2) == pytest.approx((1 - t) ** 2 * d, rel=1e-9)


def test_gen_barycenter_examples(rng):
    base = G(0, 2)
    b = gaussian_gen_barycenter(base, G(0, 1), G(0, 3), 0.5)
    assert b.std[0, 0] == pytest.approx(2.0)
    g1 = G(rng.standard_normal(2), random_spd(rng))
    b = gaussian_gen_barycenter(G([0, 0], random_spd(rng)), g1, g1, 0.5)
    assert np.allclose(b.std, g1.std, atol=1e-10) and np.allclose(b.mean, g1.mean)


def test_gen_barycenter_diagonal_equals_plain():
    a, b, c = G([0, 1], np.diag([1, 2])), G([1, 1], np.diag([2, 1])), G([2, 0], np.diag([3, 3]))
    gen = gaussian_gen_barycenter(b, a, c, 0.5)
    plain = gaussian_barycenter(a, c, 0.5)
    assert np.allclose(gen.std, plain.std) and np.allclose(gen.mean, plain.mean)


def test_sqrt_examples():
    assert np.allclose(sqrt2x2_spd(np.eye(2)), np.eye(2))
    assert np.allclose(sqrt2x2_spd(np.diag([2.0, 8.0])), np.diag([np.sqrt(2), 2 * np.sqrt(2)]))
    r = np.sqrt(2) / 2
    assert np.allclose(sqrt2x2_spd([[5, 3], [3, 5]]), [[3 * r, r], [r, 3 * r]], atol=1e-14)
    with pytest.raises(NotSPD):
        sqrt2x2_spd([[1, 2], [2, 1]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_sqrt_squares_back(seed):
    S = random_spd(np.random.default_rng(seed), lo=1e-3, hi=10)
    R = sqrt2x2_spd(S)
    assert np.abs(R @ R - S).max() <= 1e-12 * max(1.0, np.abs(S).max())
    assert np.linalg.eigvalsh(R).min() > 0


def test_sqrtm_general(rng):
    S = random_spd(rng, d=4)
    R = sqrtm_spd(S)
    assert np.allclose(R @ R, S, atol=1e-12)


def test_polarization_zero_on_geodesic(rng):
    g1, g3 = G(rng.standard_normal(2), random_spd(rng)), G(rng.standard_normal(2), random_spd(rng))
    g2 = gaussian_barycenter(g1, g3, 0.5)
    assert abs(polarization_term(g1, g2, g3)) <= 1e-10


def test_diag_spline_energy_linear_zero():
    t = [0, 1]
    path = DiagGaussianPath(cubic_spline_interpolate(t, [[0, 0], [1, 2]]), cubic_spline_interpolate(t, [[1, 1], [2, 1]]))
    assert diag_spline_energy(path) == pytest.approx(0.0, abs=1e-20)


def test_espline_two_keyframes_geodesic():
    es = gaussian_espline([(0, G([0, 0], np.diag([1, 2]))), (1, G([1, 3], np.diag([3, 1])))], K=4)
    t = np.linspace(0, 1, 5)[:, None]
    assert np.allclose(es.sample.means, t * [1, 3])
    assert np.allclose(np.diagonal(es.sample.stds, axis1=1, axis2=2), [1, 2] + t * [2, -1])


def test_espline_smooth_regime_matches_cubic():
    kf = [(0, G(0, 1)), (0.5, G(0, 0.7)), (1, G(0, 1))]
    es = gaussian_espline(kf, K=16)
    assert es.regime == "spline"
    ref = cubic_spline_interpolate([0, 0.5, 1], [1, 0.7, 1])(np.arange(17) / 16)
    assert np.abs(es.sample.stds[:, 0, 0] - ref).max() <= 1e-8


def test_espline_constrained_beats_clipping():
    kf = [(0, G(0, 1)), (0.25, G(1, 0.05)), (0.5, G(0.5, 0.05)), (1, G(0, 1))]
    K = 16
    es = gaussian_espline(kf, K)
    assert es.regime == "constrained"
    lam = es.sample.stds[:, 0, 0]
    assert lam.min() >= 1e-4 * (1 - 1e-12)

    def energy(sample):
        s, _ = discrete_euclidean_energies(np.hstack([sample.means, sample.stds[:, :, 0]]), K)
        return 4 * K**3 * s.sum()

    clipped = clipped_spline_sample(kf, K)
    assert energy(es.sample) < energy(clipped)


def test_espline_rejects_bad_keyframes():
    with pytest.raises(InfeasibleConstraint):
        gaussian_espline([(0, G(0, 1e-6)), (1, G(0, 1))], K=4)
    with pytest.raises(ValueError):
        gaussian_espline([(0, G(0, 1)), (0.3, G(0, 1)), (1, G(0, 1))], K=4)
