"""Command line: ``jumpmart <subcommand> --config FILE [--out DIR] ...``.

Exit codes: 0 all checks passed, 2 a check failed, 1 configuration error
(no artifacts are written in that case).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from ..calculus import coordinate_field, ito_integral_connection, ito_integral_embedding, theorem_decomposition
from ..geometry import DomainError, ball_cover
from ..martingales import build_ensembles, martingale_statistic
from ..metrics import hp_norm_upper_arrays, rhat_lower, ucp_metric
from ..paths import TimeGrid, c_constant, detect_killing_many
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, canonical_text, load_config, parse_config
from .io import manifest, path_csv, table_csv, write_json, write_text
from .localization import build_localization_times

log = logging.getLogger("jumpmart")

SUBCOMMANDS = (
    "simulate",
    "integrate",
    "metrics",
    "verify-lemma31",
    "verify-lemma32",
    "verify-theorem1",
    "verify-corollary",
    "localize",
    "constants",
)


class Artifacts:
    """Single-writer collector: nothing touches disk until ``flush``."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def flush(self, out: str, cfg: ExperimentConfig, command: str, extra: dict):
        os.makedirs(out, exist_ok=True)
        for name, text in self.files.items():
            write_text(os.path.join(out, name), text)
        write_text(os.path.join(out, "config.ini"), canonical_text(cfg))
        write_json(os.path.join(out, "manifest.json"), manifest(cfg, command, self.files, extra))


# ---------------------------------------------------------------------------
# subcommands; each returns (passed, extra manifest fields)


def cmd_simulate(cfg, art, args):
    m, spec = cfg.manifold, cfg.spec
    grid = TimeGrid.uniform(spec.horizon, cfg.steps)
    ens = build_ensembles(m, spec, grid, cfg.paths, cfg.seed, threads=cfg.threads)[0]
    for i in range(min(args.save_paths, len(ens))):
        art.add(f"paths/path_{i:04d}.csv", path_csv(ens.path(i)))
    jumps = ens.jump_flags.sum(axis=1)
    rows = [[i, int(s), int(k), int(j), *map(float, ens.values[i, -1])]
            for i, (s, k, j) in enumerate(zip(ens.per_path_seeds, ens.kill_index, jumps))]
    d = m.ambient_dim
    art.add("ensemble.csv", table_csv(["path", "seed", "kill_index", "jumps"] + [f"x{i}_T" for i in range(d)], rows))
    stat = martingale_statistic(ens, m, threads=cfg.threads) if spec.kill_rate == 0 else None
    return True, {"martingale_statistic": None if stat is None else stat.estimate}


def cmd_integrate(cfg, art, args):
    m, spec = cfg.manifold, cfg.spec
    grid = TimeGrid.uniform(spec.horizon, cfg.steps)
    count = min(cfg.paths, args.save_paths if args.save_paths > 0 else cfg.paths)
    ens = build_ensembles(m, spec, grid, count, cfg.seed, threads=cfg.threads)[0]
    rows, worst = [], 0.0
    for k in range(len(ens)):
        p = ens.path(k)
        ev = m.extension_value(p.values)
        for i in range(m.ambient_dim):
            f = coordinate_field(m, i)
            a = ito_integral_connection(f, p, m).values
            b = ito_integral_embedding(f, p, m).values
            N, A, B = theorem_decomposition(p, i, m)
            resid = float(np.max(np.abs(ev[0, i] + N.values + A.values + B.values - ev[:, i])))
            worst = max(worst, resid)
            rows.append([k, i, float(np.max(np.abs(a - b))), resid, float(b[-1]), float(A.values[-1]), float(B.values[-1])])
    art.add("integrals.csv", table_csv(["path", "coord", "max_gap", "reconstruction_residual", "N_T", "A_T", "B_T"], rows))
    return worst < 1e-8, {"max_reconstruction_residual": worst}


def cmd_metrics(cfg, art, args):
    m, spec = cfg.manifold, cfg.spec
    grid = TimeGrid.uniform(spec.horizon, cfg.steps)
    eps = [e for e in cfg.epsilons]
    ens = build_ensembles(m, spec, grid, cfg.paths, cfg.seed, [1.0] + [1 + e for e in eps], cfg.threads)
    from ..martingales import compensator_arrays

    A0 = compensator_arrays(m, ens[0].values, ens[0].events)
    rows = []
    for e, en in zip(eps, ens[1:]):
        D = en.values - ens[0].values
        A = compensator_arrays(m, en.values, en.events) - A0
        r = ucp_metric(D, grid)
        rh = rhat_lower(D, grid, seed=cfg.seed, threads=cfg.threads)
        hp = hp_norm_upper_arrays(D[:, 0], D - D[:, :1] - A, A, cfg.p)
        rows.append([e, r.estimate, r.standard_error, rh.estimate, rh.standard_error, hp.estimate, hp.standard_error])
        art.add("metrics.jsonl", art.files.get("metrics.jsonl", "") + "".join(x.to_json() + "\n" for x in (r, rh, hp)))
    art.add("metrics.csv", table_csv(["epsilon", "r", "r_se", "rhat_lb", "rhat_se", "hp_ub", "hp_se"], rows))
    return True, {}


def cmd_lemma31(cfg, art, args):
    rep = ex.verify_lemma_quadratic_bound(cfg)
    art.add("lemma31.csv", rep.to_csv())
    sj = rep.single_jump
    art.add("lemma31_single_jump.csv", table_csv(list(sj), [list(sj.values())]))
    return rep.passed, {"threshold": rep.threshold, "fitted_constant": rep.fitted_constant,
                        "drift_ok": rep.drift_ok, "single_jump_ok": sj["passed"]}


def _ratio_extra(t):
    return {"bounded": t.bounded, "stable": t.stable, "finite_positive": t.finite_positive,
            "skipped_epsilons": t.skipped, "threshold": {k: t.params[k] for k in ("a2", "R_threshold", "R", "R_ok")}}


def cmd_lemma32(cfg, art, args):
    t = ex.verify_lemma_difference_bound(cfg)
    oj = ex.one_jump_ratio_check(cfg)
    hb = ex.verify_hessian_bound(cfg.hessian_samples, cfg.R, cfg.alpha, cfg.manifold.ambient_dim,
                                 cfg.seed, cfg.threads)
    art.add("lemma32_hessian.csv", hb.to_csv())
    art.add("lemma32.csv", t.to_csv())
    art.add("lemma32_one_jump.csv", table_csv(list(oj), [list(oj.values())]))
    ok = (t.stable if args.require_stable else t.bounded) and oj["passed"] and hb.passed
    return ok, {**_ratio_extra(t), "one_jump_ok": oj["passed"], "hessian_violations": hb.violations}


def cmd_theorem1(cfg, art, args):
    t = ex.verify_theorem_ratio(cfg)
    art.add("theorem1.csv", t.to_csv())
    return (t.stable if args.require_stable else t.bounded), _ratio_extra(t)


def cmd_corollary(cfg, art, args):
    rep = ex.verify_corollary(cfg, independent=args.independent, kill_rate=args.kill_rate)
    art.add("corollary.csv", rep.to_csv())
    art.add("classifier.csv", rep.classifier_csv)
    return rep.passed, {"checks": rep.checks, "label": rep.label, "rates": rep.rates,
                        "limit_statistic": rep.limit_statistic.estimate, "killing_fraction": rep.killing_fraction}


def cmd_localize(cfg, art, args):
    m, spec = cfg.manifold, replace(cfg.spec, kill_rate=0.0)
    cover = ball_cover(m, cfg.R / 4, cfg.R / 2)
    art.add("cover.csv", cover.to_csv())
    grid = TimeGrid.uniform(spec.horizon, cfg.steps)
    eps = ex.sequence_epsilons(cfg)
    ens = build_ensembles(m, spec, grid, cfg.paths, cfg.seed, [1.0] + [1 + e for e in eps], cfg.threads)
    rows, iv, ii, uncovered = [], 0, 0, 0
    for k in range(cfg.paths):
        tab = build_localization_times(ens[0].values[k], cover, [e.values[k] for e in ens[1:]])
        iv += tab.property_iv
        ii += tab.sigma_reaches_tau(len(eps) - 1)
        uncovered += tab.uncovered
        if k < args.save_paths:
            art.add(f"localization/path_{k:04d}.csv", tab.to_csv())
        rows.append([k, len(tab.stages), tab.property_iv, tab.sigma_reaches_tau(len(eps) - 1), tab.uncovered])
    art.add("localization.csv", table_csv(["path", "stages", "property_iv", "sigma_reaches_tau", "uncovered"], rows))
    return iv == cfg.paths and uncovered == 0, {
        "balls": len(cover), "property_iv_fraction": iv / cfg.paths, "sigma_reaches_tau_fraction": ii / cfg.paths,
    }


HANDLERS = {
    "simulate": cmd_simulate,
    "integrate": cmd_integrate,
    "metrics": cmd_metrics,
    "verify-lemma31": cmd_lemma31,
    "verify-lemma32": cmd_lemma32,
    "verify-theorem1": cmd_theorem1,
    "verify-corollary": cmd_corollary,
    "localize": cmd_localize,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jumpmart", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="INI config file (defaults apply to missing keys)")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, help="base seed override")
    ap.add_argument("--threads", type=int, help="worker threads override")
    ap.add_argument("--strict-threshold", action="store_true", help="reject R above the computed threshold")
    ap.add_argument("--require-stable", action="store_true",
                    help="ratio checks demand stability around the median instead of no blow-up")
    ap.add_argument("--independent", action="store_true", help="corollary negative control: independent seeds")
    ap.add_argument("--kill-rate", type=float, default=None, help="kill rate for the common-killing check")
    ap.add_argument("--save-paths", type=int, default=5, help="number of per-path files to write")
    ap.add_argument("--m", type=int, default=1, help="constants: dimension m")
    ap.add_argument("--alpha", type=float, default=1.0, help="constants: stability index")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be positive")
        kw["threads"] = args.threads
    if args.strict_threshold:
        kw["strict_threshold"] = True
    if args.out:
        kw["out_dir"] = args.out
    return cfg.with_overrides(**kw) if kw else cfg


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.subcommand == "constants":
        try:
            print(repr(c_constant(args.m, args.alpha)))
        except DomainError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return 1
        return 0
    try:
        cfg = resolve_config(args)
        if args.subcommand.startswith("verify-"):
            ex.check_threshold(cfg)
        art = Artifacts()
        passed, extra = HANDLERS[args.subcommand](cfg, art, args)
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    art.flush(cfg.out_dir, cfg, args.subcommand, {"passed": bool(passed), **extra})
    log.info("%s: %s", args.subcommand, "pass" if passed else "FAIL")
    print(f"{args.subcommand}: {'pass' if passed else 'FAIL'}")
    return 0 if passed else 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
