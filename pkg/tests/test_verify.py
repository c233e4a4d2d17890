import os

import numpy as np
import pytest

from jumpmart.geometry import BallCover, ball_cover, sphere
from jumpmart.martingales import JumpMartingaleSpec, build_ensembles, build_geodesic_jump_martingale
from jumpmart.paths import TimeGrid
from jumpmart.verify import ConfigError, build_localization_times, parse_config
from jumpmart.verify.cli import run
from jumpmart.verify.config import canonical_text
from jumpmart.verify.experiments import (
    check_threshold,
    hessian_h,
    one_jump_ratio_check,
    verify_hessian_bound,
    verify_theorem_ratio,
)
from jumpmart.verify.io import path_csv, read_path_csv

ROOT = os.path.dirname(os.path.dirname(__file__))
SMOKE = os.path.join(ROOT, "configs", "smoke.ini")


def test_empty_config_uses_defaults():
    cfg = parse_config("")
    assert cfg.R == 0.3 and cfg.spec.theta == 0.4 and cfg.epsilons == (0.2, 0.1, 0.05, 0.025)
    assert parse_config(canonical_text(cfg)).config_hash == cfg.config_hash


@pytest.mark.parametrize("text", [
    "[nonsense]\na = 1\n",
    "[experiment]\nbogus = 1\n",
    "[experiment]\nR = abc\n",
    "[sweep]\nrates =\n",
    "[spec]\nx0 = 0, 0, 2\n",
    "[spec]\ntheta = 0.9\n",
    "no section header\n",
])
def test_malformed_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_strict_threshold_rejects_default_R():
    cfg = parse_config("[experiment]\nstrict_threshold = true\n")
    with pytest.raises(ConfigError, match="threshold"):
        check_threshold(cfg)
    ok = parse_config("[experiment]\nstrict_threshold = true\nR = 0.0002\n")
    assert check_threshold(ok)["R_ok"]


def test_path_csv_round_trip():
    m = sphere(3)
    spec = JumpMartingaleSpec(x0=(0.0, 0.0, 1.0), rate=1.0, theta=0.4, walk=0.1)
    p = build_geodesic_jump_martingale(m, spec, TimeGrid.uniform(4.0, 50), 3)
    q = read_path_csv(path_csv(p))
    assert np.array_equal(p.values, q.values) and np.array_equal(p.jump_flags, q.jump_flags)
    assert np.array_equal(p.events.kind, q.events.kind) and q.events.theta == p.events.theta


def test_hessian_closed_form_fixture():
    w = z = np.zeros((1, 3))
    u, v = np.eye(3)[:1], -np.eye(3)[:1]
    uv = np.concatenate([u, v], axis=1)[0]
    assert np.isclose(uv @ hessian_h(w, z)[0] @ uv, 8.0)
    rng = np.random.default_rng(0)
    w, z = rng.standard_normal((2, 3)) * 0.3
    h = lambda a: np.exp(np.sum((a[3:] - a[:3]) ** 2)) - 1
    a0, eps = np.concatenate([w, z]), 1e-4
    fd = np.empty((6, 6))
    for i in range(6):
        for j in range(6):
            e_i, e_j = np.eye(6)[i] * eps, np.eye(6)[j] * eps
            fd[i, j] = (h(a0 + e_i + e_j) - h(a0 + e_i - e_j) - h(a0 - e_i + e_j) + h(a0 - e_i - e_j)) / (4 * eps**2)
    assert np.allclose(fd, hessian_h(w, z), atol=1e-5)


def test_hessian_bound_small_run():
    rep = verify_hessian_bound(20_000, 0.3, 0.5, chunk=5000)
    assert rep.passed and rep.violations == 0


def test_localization_constant_path():
    cover = BallCover(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]), 0.2, 0.4)
    tab = build_localization_times(np.tile([0.0, 0.0, 1.0], (10, 1)), cover)
    assert tab.stages == [0] and tab.tau_next == [10] == [tab.never]


def test_localization_hand_crossing():
    cover = BallCover(np.array([[0.0, 0.0], [1.0, 0.0]]), 0.6, 0.8)
    X = np.zeros((12, 2))
    X[7:] = [1.0, 0.0]
    tab = build_localization_times(X, cover, [X + 0.01, X - 0.01])
    assert tab.tau_next[0] == 7
    assert tab.balls[:2] == [0, 1] and tab.tau[1] == 7 and tab.stages[1] == 1
    assert tab.property_iv and tab.sigma_reaches_tau(1)


def test_localization_property_iv_on_coupled_paths():
    m = sphere(3)
    cfg = parse_config("")
    cover = ball_cover(m, cfg.R / 4, cfg.R / 2)
    spec = JumpMartingaleSpec(x0=(0.0, 0.0, 1.0), rate=1.0, theta=0.4, walk=0.1)
    eps = [0.2, 0.1, 0.05, 0.025]
    ens = build_ensembles(m, spec, TimeGrid.uniform(4.0, 100), 1000, 1, [1.0] + [1 + e for e in eps], threads=4)
    reach = 0
    for k in range(1000):
        tab = build_localization_times(ens[0].values[k], cover, [e.values[k] for e in ens[1:]])
        assert tab.property_iv and not tab.uncovered
        reach += tab.sigma_reaches_tau(3)
    assert reach >= 950


def test_one_jump_ratio_oracle():
    assert one_jump_ratio_check(parse_config(""), epsilon=0.2)["passed"]


def test_theorem_ratio_skips_zero_epsilon():
    cfg = parse_config("[experiment]\npaths = 200\nsteps = 100\n[sweep]\nepsilons = 0, 0.1, 0.05\n")
    t = verify_theorem_ratio(cfg)
    assert t.skipped == [0.0] and len(t.rows) == 2 and t.finite_positive


def test_ratio_table_bounded_for_doubled_beta():
    cfg = parse_config(
        "[manifold]\nradius = 2.0\n[spec]\nx0 = 0, 0, 2\ntheta = 0.4\n"
        "[experiment]\nbeta = 2.0\npaths = 300\nsteps = 100\n[sweep]\nepsilons = 0.2, 0.1, 0.05\n"
    )
    t = verify_theorem_ratio(cfg)
    assert t.finite_positive and t.bounded


def test_cli_constants(capsys):
    assert run(["constants", "--m", "1", "--alpha", "1"]) == 0
    assert capsys.readouterr().out.startswith("0.1591549")


def test_cli_malformed_config_writes_nothing(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nR = nope\n")
    out = tmp_path / "out"
    assert run(["verify-lemma32", "--config", str(bad), "--out", str(out)]) == 1
    assert not out.exists()
    assert run(["verify-lemma31", "--strict-threshold", "--out", str(out)]) == 1
    assert not out.exists()
    assert run(["bogus"]) == 1


def test_cli_integrate_and_simulate(tmp_path):
    assert run(["integrate", "--config", SMOKE, "--out", str(tmp_path / "i")]) == 0
    assert run(["simulate", "--config", SMOKE, "--out", str(tmp_path / "s"), "--save-paths", "2"]) == 0
    assert (tmp_path / "s" / "paths" / "path_0001.csv").exists()
    assert (tmp_path / "s" / "manifest.json").exists()


def test_cli_corollary_negative_control(tmp_path):
    cfg = os.path.join(ROOT, "configs", "corollary.ini")
    args = ["verify-corollary", "--config", cfg, "--threads", "4", "--seed", "5"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b"), "--independent"]) == 2
