import numpy as np
import pytest
import sympy as sp

from stokes_homog.cloud import Box
from stokes_homog.testfield import TestField

W = TestField((0.4, 0.5, 0.55), 0.3, (0.2, -1.0, 0.7))


def points_in_support(w, n, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(w.center) + w.scale * rng.uniform(0.0, 0.97, (n, 1)) * d


@pytest.fixture(scope="module")
def symbolic():
    """sympy curl of phi(y) A and its Laplacian, independent of the closed forms."""
    x = sp.symbols("x0:3", real=True)
    c, s, A = W.center, W.scale, W.amplitude
    y = [(x[k] - sp.nsimplify(c[k])) / sp.nsimplify(s) for k in range(3)]
    phi = sp.exp(1 - 1 / (1 - sum(v**2 for v in y)))
    psi = [phi * sp.nsimplify(a) for a in A]
    curl = [sp.diff(psi[2], x[1]) - sp.diff(psi[1], x[2]),
            sp.diff(psi[0], x[2]) - sp.diff(psi[2], x[0]),
            sp.diff(psi[1], x[0]) - sp.diff(psi[0], x[1])]
    lap = [sum(sp.diff(f, v, 2) for v in x) for f in curl]
    grad = [[sp.diff(f, v) for v in x] for f in curl]
    return (sp.lambdify([x], curl, "numpy"), sp.lambdify([x], grad, "numpy"),
            sp.lambdify([x], lap, "numpy"))


def test_value_matches_sympy(symbolic):
    f, _, _ = symbolic
    for p in points_in_support(W, 20):
        np.testing.assert_allclose(W(p), f(p), rtol=1e-10, atol=1e-12)


def test_gradient_matches_sympy(symbolic):
    _, g, _ = symbolic
    for p in points_in_support(W, 20, 1):
        np.testing.assert_allclose(W.gradient(p), np.array(g(p), dtype=float), rtol=1e-9, atol=1e-10)


def test_laplacian_matches_sympy(symbolic):
    _, _, lap = symbolic
    for p in points_in_support(W, 20, 2):
        np.testing.assert_allclose(W.laplacian(p), lap(p), rtol=1e-8, atol=1e-8)


def test_gradient_matches_finite_differences():
    h = 1e-6
    for p in points_in_support(W, 10, 3):
        fd = np.stack([(W(p + h * e) - W(p - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
        np.testing.assert_allclose(W.gradient(p), fd, rtol=1e-6, atol=1e-6)


def test_divergence_free():
    G = W.gradient(points_in_support(W, 200, 4))
    assert np.abs(np.trace(G, axis1=-2, axis2=-1)).max() < 1e-10


def test_compact_support():
    rng = np.random.default_rng(5)
    d = rng.standard_normal((100, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    far = np.asarray(W.center) + W.scale * rng.uniform(1.0, 3.0, (100, 1)) * d
    assert np.all(W(far) == 0) and np.all(W.gradient(far) == 0) and np.all(W.laplacian(far) == 0)
    assert W.supported_in(Box.unit())
    assert not TestField((0.1, 0.5, 0.5), 0.2, (0, 0, 1)).supported_in(Box.unit())


def test_norms_bound_samples():
    p = points_in_support(W, 20000, 6)
    sampled = np.linalg.norm(W(p), axis=1).max()
    assert sampled <= W.w_inf * (1 + 1e-6)
    assert sampled >= 0.9 * W.w_inf
    spectral = np.linalg.norm(W.gradient(p), ord=2, axis=(1, 2)).max()
    assert spectral <= W.grad_w_inf * (1 + 1e-6)
    assert W.w1inf_norm == max(W.w_inf, W.grad_w_inf)


def test_scaling():
    a = TestField((0.5, 0.5, 0.5), 0.25, (0, 0, 1))
    b = TestField((0.5, 0.5, 0.5), 0.125, (0, 0, 2))
    assert b.w_inf == pytest.approx(4 * a.w_inf)
    assert b.grad_w_inf == pytest.approx(8 * a.grad_w_inf)


def test_zero_mean():
    pts, wts = W.quadrature(16, 3)
    np.testing.assert_allclose(wts @ W(pts), 0.0, atol=1e-10)


def test_rejects_bad_scale():
    with pytest.raises(ValueError):
        TestField((0, 0, 0), 0.0, (1, 0, 0))
