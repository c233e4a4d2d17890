"""INI experiment configs.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments. Lists are comma separated. Sections:

``[manifold]``    catalog_id, ambient_dim, radius, blend_radius, trap
``[spec]``        x0, rate, angle_law, theta, walk, kill_rate, horizon, jump_cap
``[experiment]``  R, alpha, beta, p, R0, paths, steps, seed, threads,
                  strict_threshold, hessian_samples, tol, n_max, eps0
``[sweep]``       rates, steps, epsilons
``[output]``      dir

Every key has a default, so an empty file is a valid config.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace

from ..geometry import DomainError, EmbeddedManifold, from_config, to_config
from ..martingales import JumpMartingaleSpec


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 1)."""


DEFAULTS = {
    "manifold": {"catalog_id": "sphere", "ambient_dim": "3", "radius": "1.0", "blend_radius": "0.5"},
    "spec": {
        "x0": "0, 0, 1",
        "rate": "1.0",
        "angle_law": "fixed",
        "theta": "0.4",
        "walk": "0.1",
        "kill_rate": "0.0",
        "horizon": "4.0",
        "jump_cap": "0.5",
    },
    "experiment": {
        "R": "0.3",
        "alpha": "0.5",
        "beta": "1.0",
        "p": "2",
        "R0": "0.3",
        "paths": "2000",
        "steps": "400",
        "seed": "20240601",
        "threads": "1",
        "strict_threshold": "false",
        "hessian_samples": "1000000",
        "tol": "0.01",
        "n_max": "3",
        "eps0": "0.2",
    },
    "sweep": {
        "rates": "1.0, 2.83, 8.0",
        "steps": "400, 1130, 3200",
        "epsilons": "0.2, 0.1, 0.05, 0.025",
    },
    "output": {"dir": "out"},
}

_ALLOWED = {s: set(v) for s, v in DEFAULTS.items()}
_ALLOWED["manifold"].add("trap")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(t) for t in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    manifold: EmbeddedManifold
    spec: JumpMartingaleSpec
    R: float = 0.3
    alpha: float = 0.5
    beta: float = 1.0
    p: float = 2.0
    R0: float = 0.3
    paths: int = 2000
    steps: int = 400
    seed: int = 20240601
    threads: int = 1
    strict_threshold: bool = False
    hessian_samples: int = 1_000_000
    tol: float = 0.01
    n_max: int = 3
    eps0: float = 0.2
    rates: tuple[float, ...] = (1.0, 2.83, 8.0)
    sweep_steps: tuple[int, ...] = (400, 1130, 3200)
    epsilons: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    out_dir: str = "out"
    text: str = field(default="", compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def canonical_text(cfg: ExperimentConfig) -> str:
    """Deterministic INI rendering of the resolved config (hashing and manifests)."""
    s = cfg.spec
    sections = {
        "manifold": to_config(cfg.manifold),
        "spec": {
            "x0": ", ".join(repr(v) for v in s.x0),
            "rate": repr(s.rate),
            "angle_law": s.angle_law,
            "theta": "" if s.theta is None else repr(s.theta),
            "walk": repr(s.walk),
            "kill_rate": repr(s.kill_rate),
            "horizon": repr(s.horizon),
            "jump_cap": repr(s.jump_cap),
        },
        "experiment": {
            k: repr(getattr(cfg, k)) if not isinstance(getattr(cfg, k), bool) else str(getattr(cfg, k)).lower()
            for k in ("R", "alpha", "beta", "p", "R0", "paths", "steps", "seed", "strict_threshold",
                      "hessian_samples", "tol", "n_max", "eps0")
        },
        "sweep": {
            "rates": ", ".join(repr(v) for v in cfg.rates),
            "steps": ", ".join(str(v) for v in cfg.sweep_steps),
            "epsilons": ", ".join(repr(v) for v in cfg.epsilons),
        },
    }
    lines = []
    for name in sorted(sections):
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in sorted(sections[name].items())]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    for sec in cp.sections():
        if sec not in _ALLOWED:
            raise ConfigError(f"unknown section [{sec}]")
        bad = set(cp[sec]) - _ALLOWED[sec]
        if bad:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(bad)}")
    get = lambda sec, key: cp.get(sec, key, fallback=DEFAULTS[sec][key]).strip()
    try:
        manifold = from_config({k: get("manifold", k) for k in DEFAULTS["manifold"]}
                               | ({"trap": cp.get("manifold", "trap")} if cp.has_option("manifold", "trap") else {}))
        theta = get("spec", "theta")
        spec = JumpMartingaleSpec(
            x0=_floats(get("spec", "x0")),
            rate=float(get("spec", "rate")),
            angle_law=get("spec", "angle_law"),
            theta=float(theta) if theta else None,
            walk=float(get("spec", "walk")),
            kill_rate=float(get("spec", "kill_rate")),
            horizon=float(get("spec", "horizon")),
            jump_cap=float(get("spec", "jump_cap")),
        )
        e = lambda k: get("experiment", k)
        strict = e("strict_threshold").lower()
        if strict not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"strict_threshold must be a boolean, got {strict!r}")
        cfg = ExperimentConfig(
            manifold=manifold,
            spec=spec,
            R=float(e("R")),
            alpha=float(e("alpha")),
            beta=float(e("beta")),
            p=float(e("p")),
            R0=float(e("R0")),
            paths=int(e("paths")),
            steps=int(e("steps")),
            seed=int(e("seed")),
            threads=int(e("threads")),
            strict_threshold=strict in ("true", "1", "yes"),
            hessian_samples=int(e("hessian_samples")),
            tol=float(e("tol")),
            n_max=int(e("n_max")),
            eps0=float(e("eps0")),
            rates=_floats(get("sweep", "rates")),
            sweep_steps=_ints(get("sweep", "steps")),
            epsilons=_floats(get("sweep", "epsilons")),
            out_dir=get("output", "dir"),
            text=text,
        )
    except (ValueError, DomainError) as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if min(cfg.R, cfg.alpha, cfg.beta, cfg.R0) <= 0:
        raise ConfigError("R, alpha, beta and R0 must be positive")
    if cfg.p < 1:
        raise ConfigError("p must be at least 1")
    if cfg.paths < 2 or cfg.steps < 1 or cfg.threads < 1 or cfg.n_max < 0:
        raise ConfigError("paths >= 2, steps >= 1, threads >= 1 and n_max >= 0 are required")
    if not (cfg.rates and cfg.sweep_steps and cfg.epsilons):
        raise ConfigError("all sweeps must be nonempty")
    if any(e < 0 for e in cfg.epsilons):
        raise ConfigError("epsilons must be nonnegative")
    m, s = cfg.manifold, cfg.spec
    try:
        s.validate(m)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    if sum(v * v for v in s.x0) ** 0.5 > cfg.beta + 1e-12:
        raise ConfigError("|x0| exceeds beta")
    if s.jump_cap > cfg.alpha + 1e-12:
        raise ConfigError("jump_cap exceeds alpha")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)
