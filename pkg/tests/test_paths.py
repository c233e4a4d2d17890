import math

import numpy as np
import pytest

from jumpmart.geometry import DomainError, sphere
from jumpmart.paths import (
    CadlagPath,
    StoppingRule,
    TimeGrid,
    apply_killing,
    c_constant,
    detect_killing,
    first_exit_time,
    path_seeds,
    sample_alpha_stable,
    sample_brownian,
    sample_compound_poisson,
    sample_ensemble,
    symmetric_stable,
)


def test_grid_basics():
    g = TimeGrid.uniform(2.0, 8)
    assert g.steps == 8 and g.never == 9 and g.is_uniform
    assert g.index_at(0.25) == 1 and g.index_at(0.26) == 2
    with pytest.raises(DomainError):
        TimeGrid(np.array([0.0, 1.0, 0.5]))


def test_brownian_refinement_is_exact_subsample():
    fine = sample_brownian(TimeGrid.uniform(1.0, 64), 2, seed=5)
    coarse = sample_brownian(TimeGrid.uniform(1.0, 16), 2, seed=5)
    assert np.allclose(fine.values[::4], coarse.values, atol=1e-14)


def test_brownian_quadratic_variation():
    p = sample_brownian(TimeGrid.uniform(1.0, 4096), 1, seed=1)
    qv = np.sum(np.diff(p.values[:, 0]) ** 2)
    assert abs(qv - 1.0) < 0.1
    assert not p.jump_flags.any()


def test_symmetric_stable_alpha2_is_gaussian():
    rng = np.random.default_rng(0)
    x = symmetric_stable(rng, 2.0, 100_000)
    # exp(-|xi|^2) is the law N(0, 2)
    assert abs(x.var() - 2.0) < 0.05


def test_alpha_stable_flags_large_increments():
    g = TimeGrid.uniform(1.0, 1000)
    p = sample_alpha_stable(g, 1, 1.0, seed=3)
    big = np.linalg.norm(p.increments, axis=1) > 3 * np.sqrt(g.dt)
    assert np.array_equal(p.jump_flags[1:], big)


def test_compound_poisson_counts():
    g = TimeGrid.uniform(10.0, 1000)
    happened = [sample_compound_poisson(g, 1, 0.5, 1.0, seed=s).jump_flags.sum() for s in range(400)]
    assert abs(np.mean(happened) - 5.0) < 3 * math.sqrt(5.0 / 400)


def test_ensemble_independent_of_threads():
    g = TimeGrid.uniform(1.0, 32)
    a = sample_ensemble(sample_brownian, 600, 9, threads=1, grid=g, dim=2)
    b = sample_ensemble(sample_brownian, 600, 9, threads=4, grid=g, dim=2)
    assert np.array_equal(a.values, b.values)


def test_seeds_unique_and_stable():
    s = path_seeds(1, 1000)
    assert len(set(s.tolist())) == 1000
    assert np.array_equal(s, path_seeds(1, 1000))


def test_first_exit_conventions():
    vals = np.zeros((10, 1))
    vals[7:] = 2.0
    assert first_exit_time(vals, [0.0], 1.0) == 7
    assert first_exit_time(np.zeros((10, 1)), [0.0], 1.0) == 10
    g = TimeGrid.uniform(1.0, 9)
    p = CadlagPath(g, vals, np.zeros(10, bool), np.zeros(1))
    rule = StoppingRule("composite", {"rules": [
        StoppingRule("first_exit_ball", {"center": [0.0], "radius": 1.0}),
        StoppingRule("deterministic", {"time": 0.5}),
    ]})
    assert rule.evaluate(p) == 5


def test_killing_round_trip():
    m = sphere(3)
    g = TimeGrid.uniform(1.0, 20)
    rng = np.random.default_rng(2)
    vals = m.closest_point(rng.standard_normal((21, 3)))
    p = CadlagPath(g, vals, np.zeros(21, bool), m.trap_point)
    for k in (1, 5, 20):
        killed = apply_killing(p, k)
        assert detect_killing(killed, m) == k
        assert killed.jump_flags[k]
        assert np.all(killed.values[k:] == m.trap_point)
    assert detect_killing(apply_killing(p, 21), m) == 21


def test_paths_reject_flag_at_zero():
    g = TimeGrid.uniform(1.0, 2)
    flags = np.array([True, False, False])
    with pytest.raises(DomainError):
        CadlagPath(g, np.zeros((3, 1)), flags, np.zeros(1))


def test_c_constant_values():
    assert abs(c_constant(1, 1.0) - 1 / (2 * math.pi)) < 1e-12
    # m = 3, alpha = 1: 1/(2 pi^2)
    assert abs(c_constant(3, 1.0) - 1 / (2 * math.pi**2)) < 1e-12
    with pytest.raises(DomainError):
        c_constant(1, 2.5)
