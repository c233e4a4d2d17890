import numpy as np
import pytest
from dataclasses import replace

from jumpmart.geometry import DomainError, sphere, torus
from jumpmart.martingales import (
    JumpMartingaleSpec,
    build_coupled_pair,
    build_ensemble,
    build_ensembles,
    build_geodesic_jump_martingale,
    canonical_decomposition,
    compensator_arrays,
    martingale_statistic,
)
from jumpmart.paths import EventLog, TimeGrid

G = TimeGrid.uniform(4.0, 200)
SPEC = JumpMartingaleSpec(x0=(0.0, 0.0, 1.0), rate=1.0, theta=0.4, walk=0.1)


def test_trivial_spec_is_constant():
    m = sphere(3)
    p = build_geodesic_jump_martingale(m, replace(SPEC, rate=0.0, walk=0.0), G, 1)
    assert np.all(p.values == p.values[0])
    d = canonical_decomposition(p, 0, m)
    assert np.all(d.martingale_part.values == 0) and np.all(d.fv_part.values == 0)


def test_circle_quarter_turn_two_points():
    m = sphere(2)
    spec = JumpMartingaleSpec(x0=(1.0, 0.0), rate=0.5, theta=np.pi / 2, jump_cap=1.5, horizon=1.0)
    g = TimeGrid.uniform(1.0, 50)
    ens = build_ensemble(m, spec, g, 4000, 3)
    first = np.argmax(ens.jump_flags, axis=1)
    jumped = ens.jump_flags.any(axis=1)
    after = ens.values[np.arange(len(ens)), first][jumped]
    assert np.allclose(np.abs(after[:, 1]), 1.0) and np.allclose(after[:, 0], 0.0, atol=1e-12)
    up = np.mean(after[:, 1] > 0)
    assert abs(up - 0.5) < 3 * np.sqrt(0.25 / len(after))


def test_conditional_mean_of_tangent_increments_is_zero():
    m = sphere(3)
    ens = build_ensemble(m, replace(SPEC, rate=2.0, walk=0.3), TimeGrid.uniform(4.0, 100), 1000, 5)
    left = ens.values[:, :-1].reshape(-1, 3)
    inc = np.diff(ens.values, axis=1).reshape(-1, 3)
    t = m.project(left, inc)
    mean, se = t.mean(axis=0), t.std(axis=0, ddof=1) / np.sqrt(len(t))
    assert np.all(np.abs(mean) < 3 * se)


def test_spec_validation():
    m = sphere(3)
    with pytest.raises(DomainError):
        replace(SPEC, theta=1.0).validate(m)
    with pytest.raises(DomainError):
        replace(SPEC, x0=(0.0, 0.0, 2.0)).validate(m)
    with pytest.raises(DomainError):
        SPEC.validate(m, TimeGrid.uniform(4.0, 20), (1.0,))  # rate * dt = 0.2
    assert np.isclose(m.max_chord(replace(SPEC, theta=None).resolved_theta(m)), SPEC.jump_cap)


def test_coupled_pair_zero_epsilon_identical():
    m = sphere(3)
    pair = build_coupled_pair(m, SPEC, 0.0, G, 11)
    assert np.array_equal(pair.x.values, pair.y.values)
    assert pair.sup_distance() == 0.0


def test_coupled_pair_linear_in_epsilon():
    m = sphere(3)
    eps = [0.2, 0.1, 0.05]
    ens = build_ensembles(m, SPEC, G, 200, 4, [1.0] + [1 + e for e in eps])
    sup = [np.mean(np.max(np.linalg.norm(e.values - ens[0].values, axis=-1), axis=1)) for e in ens[1:]]
    slope = np.polyfit(np.log(eps), np.log(sup), 1)[0]
    assert 0.8 <= slope <= 1.2
    assert sup[0] >= sup[1] >= sup[2]


def test_canonical_decomposition_jump_size_on_circle():
    m = sphere(2)
    theta = 0.6
    spec = JumpMartingaleSpec(x0=(1.0, 0.0), rate=1.0, theta=theta, jump_cap=1.0)
    p = build_geodesic_jump_martingale(m, spec, TimeGrid.uniform(4.0, 100), 2)
    d = canonical_decomposition(p, 0, m)
    dA = np.diff(compensator_arrays(m, p.values, p.events), axis=0)
    jumps = p.events.kind[1:] == EventLog.JUMP
    assert jumps.any()
    assert np.allclose(np.linalg.norm(dA[jumps], axis=1), 1 - np.cos(theta))
    assert np.max(np.abs(d.reconstruct() - p.values[:, 0])) < 1e-10


def test_martingale_statistic_constant_is_zero():
    m = sphere(3)
    ens = build_ensemble(m, replace(SPEC, rate=0.0, walk=0.0), G, 100, 1)
    assert martingale_statistic(ens, m).estimate == 0.0


def test_martingale_statistic_power():
    m = sphere(3)
    good = build_ensemble(m, SPEC, G, 3000, 8)
    bad = build_ensemble(m, replace(SPEC, bias=0.3), G, 3000, 8)
    assert martingale_statistic(good, m).estimate < 3.0
    assert martingale_statistic(bad, m).estimate > 5.0


def test_torus_compensator_is_exact_mean():
    m = torus(2)
    x0 = (1.0, 0.0, 0.0, 1.0)
    spec = JumpMartingaleSpec(x0=x0, rate=2.0, theta=0.5, walk=0.2, horizon=2.0)
    ens = build_ensemble(m, spec, TimeGrid.uniform(2.0, 50), 4000, 6)
    A = compensator_arrays(m, ens.values, ens.events)
    M = ens.values - ens.values[:, :1] - A
    z = np.abs(M[:, -1].mean(0)) / (M[:, -1].std(0, ddof=1) / np.sqrt(len(M)))
    assert np.all(z < 4.0)


def test_killing_freezes_at_trap():
    m = sphere(3)
    ens = build_ensemble(m, replace(SPEC, kill_rate=0.5), G, 200, 2)
    killed = ens.kill_index < G.never
    assert killed.any()
    for k in np.flatnonzero(killed)[:10]:
        assert np.all(ens.values[k, ens.kill_index[k]:] == 0.0)
