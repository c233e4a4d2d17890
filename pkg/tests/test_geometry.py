import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpmart.geometry import (
    DomainError,
    ball_cover,
    cutoff,
    dense_sample,
    from_config,
    sphere,
    to_config,
    torus,
)


def _points(m, rng, n=50):
    return m.closest_point(rng.standard_normal((n, m.ambient_dim)))


def test_cutoff_levels_and_smoothness():
    b = 0.5
    t = np.array([0.0, 0.1, 0.25, 0.5, 0.7])
    chi, d1, d2 = cutoff(t, b)
    assert np.allclose(chi[:3], 1.0) and np.allclose(chi[3:], 0.0)
    assert np.all(d1[:3] == 0) and np.all(d2[3:] == 0)
    s = np.linspace(0.26, 0.49, 40)
    h = 1e-6
    c0 = cutoff(s, b)
    fd1 = (cutoff(s + h, b)[0] - cutoff(s - h, b)[0]) / (2 * h)
    assert np.allclose(fd1, c0[1], atol=1e-6)
    assert np.all(np.diff(cutoff(s, b)[0]) <= 0)


@pytest.mark.parametrize("make", [lambda: sphere(2), lambda: sphere(3), lambda: torus(2)])
def test_projection_is_orthogonal_projector(make, rng):
    m = make()
    for x in _points(m, rng, 5):
        P = m.tangent_projection(x)
        assert np.allclose(P, P.T)
        assert np.allclose(P @ P, P)
        assert np.isclose(np.trace(P), m.intrinsic_dim)


def test_connection_rule_zero_on_diagonal(s2, rng):
    for x in _points(s2, rng, 10):
        assert np.array_equal(s2.connection_rule(x, x), np.zeros(3))


def test_connection_rule_rejects_off_manifold(s2):
    with pytest.raises(DomainError):
        s2.connection_rule(np.array([0.0, 0.0, 2.0]), np.array([0.0, 0.0, 1.0]))


def test_geodesic_step_stays_on_manifold_and_has_speed(t2, rng):
    x = _points(t2, rng, 20)
    v = t2.random_tangent(x, rng.standard_normal(x.shape))
    h = 1e-6
    y = t2.geodesic_step(x, v, np.full(len(x), h))
    assert np.all(t2.is_on_manifold(y))
    assert np.allclose((y - x) / h, v, atol=1e-5)


def test_geodesic_step_quarter_turn_on_circle(s1):
    y = s1.geodesic_step(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.pi / 2)
    assert np.allclose(y, [0.0, 1.0], atol=1e-15)


def test_extension_identity_on_manifold(s2, t2, rng):
    for m in (s2, t2):
        y = _points(m, rng)
        assert np.allclose(m.extension_value(y), y, atol=1e-14)
        J = m.extension_jacobian(y)
        P = np.stack([m.tangent_projection(p) for p in y])
        assert np.allclose(J, P, atol=1e-12)
        assert np.array_equal(m.extension_value(m.trap_point), m.trap_point)


def test_extension_derivatives_match_finite_differences(s2, rng):
    x = rng.standard_normal((10, 3))
    x = x / np.linalg.norm(x, axis=1, keepdims=True) * rng.uniform(0.6, 1.4, (10, 1))
    h = 1e-6
    J = s2.extension_jacobian(x)
    H = s2.extension_hessian_tensor(x)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (s2.extension_value(x + e) - s2.extension_value(x - e)) / (2 * h)
        assert np.allclose(J[..., :, j], fd, atol=1e-7)
        fdj = (s2.extension_jacobian(x + e) - s2.extension_jacobian(x - e)) / (2 * h)
        assert np.allclose(H[..., :, :, j], fdj, atol=1e-5)


def test_derivative_bounds_monotone_in_radius(s2):
    b1 = s2.derivative_bounds(0.8)
    b2 = s2.derivative_bounds(1.8)
    assert b1.a1 <= b2.a1 and b1.a2 <= b2.a2 and b1.a3 <= b2.a3
    assert b2.blend_shell_sampled
    tube = s2.derivative_bounds(0.4, region="tube")
    assert tube.a1 >= 1.0


def test_mean_cosine_matches_monte_carlo(rng):
    m = torus(3)
    x = _points(m, rng, 1)[0]
    v = m.random_tangent(np.broadcast_to(x, (200_000, 6)), rng.standard_normal((200_000, 6)))
    speeds = np.linalg.norm(v.reshape(-1, 3, 2), axis=-1)
    mc = np.cos(1.3 * speeds).mean()
    assert abs(mc - m.mean_cosine(1.3)) < 4 * np.cos(1.3 * speeds).std() / np.sqrt(200_000)


def test_max_chord_is_attained_bound(t2, rng):
    theta = 0.7
    x = _points(t2, rng, 1)[0]
    V = t2.random_tangent(np.broadcast_to(x, (20_000, 4)), rng.standard_normal((20_000, 4)))
    chords = np.linalg.norm(t2.geodesic_step(np.broadcast_to(x, V.shape), V, np.full(len(V), theta)) - x, axis=1)
    assert chords.max() <= t2.max_chord(theta) + 1e-12
    assert chords.max() > 0.999 * t2.max_chord(theta)
    assert np.isclose(t2.max_chord(t2.angle_for_chord(0.5)), 0.5)


def test_ball_cover_covers_dense_probe(s2):
    cover = ball_cover(s2, 0.3, 0.6)
    probe = dense_sample(s2, 5000, seed=3)
    assert cover.covering_radius(probe) < 0.3


def test_config_round_trip(t2):
    assert from_config(to_config(t2)) == t2
    with pytest.raises(DomainError):
        from_config({"catalog_id": "klein"})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3))
def test_closest_point_lands_on_sphere(xs):
    s = sphere(3)
    x = np.asarray(xs)
    if np.linalg.norm(x) < 1e-3:
        return
    cp = s.closest_point(x)
    assert s.is_on_manifold(cp)
    assert np.linalg.norm(cp - x) <= np.linalg.norm(s.closest_point(-x) - x) + 1e-12
