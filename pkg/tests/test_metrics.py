import numpy as np
import pytest

from jumpmart.calculus import RealPath, SemimartingaleDecomposition
from jumpmart.geometry import DomainError
from jumpmart.metrics import (
    MetricReport,
    SequencePoint,
    convergence_classifier,
    hp_norm_upper,
    hp_norm_upper_arrays,
    jackknife,
    rhat_lower,
    sawtooth,
    ucp_metric,
)
from jumpmart.paths import TimeGrid

G3 = TimeGrid.uniform(3.0, 30)


def test_ucp_zero_and_constant_fixtures():
    z = ucp_metric(np.zeros((5, 31, 2)), G3)
    assert z.estimate == 0.0 and z.params["tail_bound"] == 0.125
    two = np.zeros((4, 31, 1))
    two[...] = 2.0
    r = ucp_metric(two, G3)
    assert r.estimate == 0.875 and r.standard_error == 0.0
    c = np.full((4, 31, 1), 0.4)
    assert np.isclose(ucp_metric(c, G3).estimate, 0.875 * 0.4)


def test_ucp_monotone_in_scale_and_bounded():
    rng = np.random.default_rng(0)
    X = np.cumsum(rng.standard_normal((100, 31, 2)) * 0.1, axis=1)
    vals = [ucp_metric(c * X, G3).estimate for c in (0.5, 1.0, 2.0)]
    assert vals[0] <= vals[1] <= vals[2] <= 1.0


def test_ucp_empty_rejected():
    with pytest.raises(DomainError):
        ucp_metric(np.zeros((0, 31, 1)), G3)


def test_rhat_at_least_ucp_of_coordinate():
    rng = np.random.default_rng(1)
    X = np.cumsum(rng.standard_normal((200, 31, 1)) * 0.2, axis=1)
    X -= X[:, :1]
    u = ucp_metric(X, G3)
    r = rhat_lower(X, G3)
    assert r.estimate >= u.estimate - 2 * r.standard_error
    assert rhat_lower(np.zeros((3, 31, 1)), G3).estimate == 0.0


def test_rhat_recovers_total_variation_of_monotone_path():
    g = TimeGrid.uniform(3.0, 3)
    # increments of constant sign per path: +0.2, +0.3, +0.1 and the mirror
    X = np.array([[0.0, 0.2, 0.5, 0.6], [0.0, -0.2, -0.5, -0.6]])[..., None]
    r = rhat_lower(X, g, coin_flips=0)
    # sum_k 2^-k (1 ^ TV up to k): 0.5*0.2 + 0.25*0.5 + 0.125*0.6
    assert np.isclose(r.estimate, 0.3)


def test_sawtooth_gap_between_ucp_and_rhat():
    g = TimeGrid.uniform(3.0, 8 * 16**2 * 2)
    ucp, rh = [], []
    for n in (2, 4, 8, 16):
        X = sawtooth(g, n)[None, :, None]
        ucp.append(ucp_metric(X, g).estimate)
        rh.append(rhat_lower(X, g, coin_flips=0).estimate)
    assert ucp == sorted(ucp, reverse=True) and ucp[-1] < 0.11
    # sign of the previous increment integrates |dX|: bounded away from zero
    assert min(rh) > 0.8


def test_hp_fixtures():
    g = TimeGrid.uniform(1.0, 4)
    zero = RealPath(g, np.zeros(5), np.zeros(5, bool))
    dec = SemimartingaleDecomposition(0.0, zero, zero)
    assert hp_norm_upper(np.zeros(5), dec, p=1).estimate == 0.0
    A = RealPath(g, np.array([0.0, 0.5, 0.2, 0.4, 0.9]), np.zeros(5, bool))
    dec = SemimartingaleDecomposition(1.5, zero, A)
    assert np.isclose(hp_norm_upper(1.5 + A.values, dec, p=1).estimate, 1.5 + 1.5)
    with pytest.raises(DomainError):
        hp_norm_upper(np.zeros(5), dec, p=1)


def test_hp_pure_jump_hand_formula():
    n, s, x0 = 3, 0.5, 2.0
    M = np.concatenate([[0.0], np.cumsum(s * np.array([1, -1, 1]))])
    r = hp_norm_upper_arrays(np.array([x0]), M[None], np.zeros((1, n + 1)), p=2)
    assert np.isclose(r.estimate, np.sqrt(x0**2 + n * s**2))


def test_hp_subadditive_for_p1():
    rng = np.random.default_rng(3)
    M1, M2 = (np.cumsum(rng.standard_normal((50, 11)), axis=1) for _ in range(2))
    A1, A2 = (np.cumsum(rng.uniform(-1, 1, (50, 11)), axis=1) for _ in range(2))
    for arr in (M1, M2, A1, A2):
        arr -= arr[:, :1]
    z = np.zeros(50)
    h = lambda M, A: hp_norm_upper_arrays(z, M, A, p=1).estimate
    assert h(M1 + M2, A1 + A2) <= h(M1, A1) + h(M2, A2) + 1e-12


def test_jackknife_mean_matches_classical_se():
    x = np.random.default_rng(4).standard_normal(500)
    est, se = jackknife(x)
    assert np.isclose(se, x.std(ddof=1) / np.sqrt(len(x)))


def test_report_validation():
    with pytest.raises(DomainError):
        MetricReport(-1.0, 0.0, "r_ucp")
    with pytest.raises(DomainError):
        MetricReport(1.0, 0.0, "bogus")


def test_classifier_labels():
    g = TimeGrid.uniform(3.0, 30)
    zeros = [SequencePoint(n, np.zeros((10, 31, 1)), np.zeros((10, 31, 1)), np.zeros((10, 31, 1))) for n in range(3)]
    assert convergence_classifier(zeros, g).label == "converged"
    rng = np.random.default_rng(5)
    base = np.cumsum(rng.standard_normal((200, 31, 1)) * 0.1, axis=1)
    base -= base[:, :1]
    pts = [SequencePoint(n, base * 2.0**-n / 8, base * 2.0**-n / 8, np.zeros_like(base)) for n in range(5)]
    rep = convergence_classifier(pts, g)
    assert rep.label == "H^p (upper-bound evidence)"
    assert rep.rates["r"] < 0
    saw = TimeGrid.uniform(3.0, 4096)
    pts = [SequencePoint(n, sawtooth(saw, k)[None, :, None]) for n, k in enumerate((4, 8, 16))]
    assert convergence_classifier(pts, saw, tol=0.15).label == "u.c.p. only"
    assert "n,r,r_se" in rep.to_csv()
