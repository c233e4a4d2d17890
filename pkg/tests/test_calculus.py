import numpy as np
import pytest

from jumpmart.calculus import (
    coordinate_field,
    continuous_hessian_term,
    ito_integral_connection,
    ito_integral_embedding,
    linear_field,
    quadratic_variation,
    stochastic_integral,
    stop_index_values,
    theorem_decomposition,
)
from jumpmart.geometry import DomainError, sphere
from jumpmart.martingales import JumpMartingaleSpec, build_geodesic_jump_martingale
from jumpmart.paths import CadlagPath, TimeGrid, apply_killing


def _path(n=400, seed=1, walk=0.3, rate=2.0):
    m = sphere(3)
    spec = JumpMartingaleSpec(x0=(0.0, 0.0, 1.0), rate=rate, theta=0.4, walk=walk)
    return m, build_geodesic_jump_martingale(m, spec, TimeGrid.uniform(4.0, n), seed)


def test_stochastic_integral_left_point():
    g = TimeGrid.uniform(3.0, 3)
    X = CadlagPath(g, np.array([[0.0], [1.0], [3.0], [2.0]]), np.zeros(4, bool), np.zeros(1))
    H = np.array([[1.0], [2.0], [-1.0], [5.0]])
    assert np.allclose(stochastic_integral(H, X).values, [0, 1, 5, 6])


def test_quadratic_variation_split():
    g = TimeGrid.uniform(2.0, 2)
    X = CadlagPath(g, np.array([[0.0], [1.0], [3.0]]), np.array([False, False, True]), np.zeros(1))
    total, cont, jump = quadratic_variation(X, X)
    assert np.allclose(total.values, [0, 1, 5])
    assert np.allclose(cont.values, [0, 1, 1])
    assert np.allclose(jump.values, [0, 0, 4])


def test_theorem_decomposition_reconstructs():
    m, X = _path()
    ev = m.extension_value(X.values)
    for i in range(3):
        N, A, B = theorem_decomposition(X, i, m)
        assert np.max(np.abs(ev[0, i] + N.values + A.values + B.values - ev[:, i])) < 1e-12


def test_theorem_decomposition_after_killing():
    m, X = _path(n=200)
    K = apply_killing(X, 150)
    for i in range(3):
        N, A, B = theorem_decomposition(K, i, m)
        ev = m.extension_value(K.values)
        assert np.max(np.abs(ev[0, i] + N.values + A.values + B.values - ev[:, i])) < 1e-12
        assert np.all(np.diff(N.values[151:]) == 0)


def test_hessian_term_approximates_continuous_residual():
    m, X = _path(n=4000, rate=0.0, walk=0.5)
    for i in range(3):
        _, A, _ = theorem_decomposition(X, i, m)
        H = continuous_hessian_term(X, i, m)
        assert np.max(np.abs(A.values - H.values)) < 0.02 * max(1e-3, np.max(np.abs(H.values)))


def test_connection_and_embedding_agree_on_pure_jumps():
    m, X = _path(walk=0.0)
    for i in range(3):
        f = coordinate_field(m, i)
        a = ito_integral_connection(f, X, m).values
        b = ito_integral_embedding(f, X, m).values
        assert np.max(np.abs(a - b)) < 1e-12


def test_ito_requires_manifold_path():
    m = sphere(3)
    g = TimeGrid.uniform(1.0, 2)
    X = CadlagPath(g, np.array([[0, 0, 1.0], [0, 0, 2.0], [0, 0, 1.0]]), np.zeros(3, bool), np.zeros(3))
    with pytest.raises(DomainError):
        ito_integral_embedding(linear_field([1.0, 0, 0]), X, m)


def test_stop_index_values():
    v = np.arange(12, dtype=float).reshape(2, 6, 1)
    out = stop_index_values(v, np.array([2, 6]))
    assert np.array_equal(out[0, :, 0], [0, 1, 2, 2, 2, 2])
    assert np.array_equal(out[1], v[1])
    pre = stop_index_values(v, np.array([2, 6]), pre=True)
    assert np.array_equal(pre[0, :, 0], [0, 1, 1, 1, 1, 1])
