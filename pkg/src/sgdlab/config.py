"""Experiment configuration: file format, validation, manifests.

Config files are INI-style with four sections:

    [problem]   kind = quadratic | pseudo_huber | smooth_rastrigin | least_squares
                plus kind-specific keys (spectrum, x_star, dim, amplitude,
                design, targets)
    [oracle]    kind = gaussian | minibatch | relative_noise
                plus sigma / batch, replace / eta
    [schedule]  alpha = c, a   and   mu = m, b   (pairs; braces optional)
    [run]       method, horizon, replicas, seed, x0, checkpoint_stride,
                lyapunov, averaged, beta, divergence_tolerance

A manifest is the fully resolved config as JSON; re-running from a manifest
reproduces the experiment byte for byte.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ParameterError
from .oracles import (GradientOracle, gaussian_oracle, minibatch_oracle,
                      relative_noise_oracle)
from .problems import (FiniteSumProblem, Problem, least_squares_sum,
                       pseudo_huber, quadratic, smooth_rastrigin)
from .schedules import PowerSchedule, make_power_schedule

MANIFEST_FORMAT = "sgdlab-experiment"


@dataclass
class ExperimentConfig:
    problem: dict
    oracle: dict
    schedule: dict
    method: str
    horizon: int
    replicas: int
    seed: int
    x0: list
    checkpoint_stride: int = 0
    lyapunov: bool = False
    lyap_coeff: float | None = None
    averaged: bool = False
    beta: float | None = None
    divergence_tolerance: float = 0.01


def build_schedule(spec: dict) -> PowerSchedule:
    try:
        return make_power_schedule(
            float(spec.get("alpha_c", 1.0)), float(spec.get("alpha_a", 0.0)),
            float(spec.get("mu_m", 0.0)), float(spec.get("mu_b", 0.0)))
    except ParameterError as e:
        raise ConfigError(f"[schedule] {e}") from e


def build_problem(spec: dict):
    """Returns (Problem, FiniteSumProblem or None)."""
    kind = spec.get("kind")
    try:
        if kind == "quadratic":
            p = quadratic(spec["spectrum"], spec.get("x_star"))
            return p, None
        if kind == "pseudo_huber":
            return pseudo_huber(int(spec["dim"])), None
        if kind == "smooth_rastrigin":
            return smooth_rastrigin(int(spec["dim"]), float(spec["amplitude"])), None
        if kind == "least_squares":
            fsp = least_squares_sum(spec["design"], spec["targets"])
            return fsp.aggregate, fsp
    except KeyError as e:
        raise ConfigError(f"[problem] kind {kind!r} is missing key {e.args[0]!r}") from e
    except ParameterError as e:
        raise ConfigError(f"[problem] {e}") from e
    raise ConfigError(f"[problem] unknown kind {kind!r}")


def build_oracle(spec: dict, problem: Problem,
                 fsp: FiniteSumProblem | None, seed: int) -> GradientOracle:
    kind = spec.get("kind")
    try:
        if kind == "gaussian":
            return gaussian_oracle(problem, float(spec["sigma"]), seed=seed)
        if kind == "relative_noise":
            return relative_noise_oracle(problem, float(spec["eta"]), seed=seed)
        if kind == "minibatch":
            if fsp is None:
                raise ConfigError("[oracle] minibatch requires a finite-sum problem "
                                  "(kind = least_squares)")
            return minibatch_oracle(fsp, int(spec["batch"]),
                                    replace=bool(spec.get("replace", True)), seed=seed)
    except KeyError as e:
        raise ConfigError(f"[oracle] kind {kind!r} is missing key {e.args[0]!r}") from e
    except ParameterError as e:
        raise ConfigError(f"[oracle] {e}") from e
    raise ConfigError(f"[oracle] unknown kind {kind!r}")


def validate_config(cfg: ExperimentConfig) -> None:
    """Static checks with messages naming the violated constraint."""
    from .optimizers import METHODS

    if cfg.method not in METHODS:
        raise ConfigError(f"[run] method must be one of {METHODS}, got {cfg.method!r}")
    if cfg.horizon < 1:
        raise ConfigError(f"[run] horizon must be >= 1, got {cfg.horizon}")
    if cfg.replicas < 2:
        raise ConfigError(f"[run] replicas must be >= 2, got {cfg.replicas}")
    if not 0.0 <= cfg.divergence_tolerance <= 1.0:
        raise ConfigError("[run] divergence_tolerance must lie in [0, 1]")
    if cfg.method in ("msgd_damped", "nasgd") and float(cfg.schedule.get("mu_m", 0.0)) <= 0:
        raise ConfigError(f"[run] method {cfg.method} requires a positive damping "
                          "coefficient: set [schedule] mu = m, b with m > 0")
    if cfg.method in ("msgd_classical", "nesterov_classical") and cfg.beta is None:
        raise ConfigError(f"[run] method {cfg.method} requires [run] beta")
    if cfg.beta is not None and not 0.0 <= cfg.beta < 1.0:
        raise ConfigError(f"[run] beta must lie in [0, 1), got {cfg.beta}")
    if cfg.lyapunov and cfg.checkpoint_stride != 1:
        raise ConfigError("[run] lyapunov = true requires checkpoint_stride = 1 "
                          "(the descent fit needs consecutive checkpoints)")
    schedule = build_schedule(cfg.schedule)
    problem, _ = build_problem(cfg.problem)
    if len(cfg.x0) != problem.dim:
        raise ConfigError(f"[run] x0 has length {len(cfg.x0)}, problem dim is {problem.dim}")
    if problem.minimum is None:
        raise ConfigError("[problem] experiments require a problem with a known minimum")
    if cfg.method in ("msgd_damped", "nasgd"):
        worst = schedule.alpha(1) * schedule.mu(1)
        if worst > 1.0:
            raise ConfigError(
                f"[schedule] mu_1 * alpha_1 = {worst} exceeds 1; the velocity "
                "decay factor 1 - mu_k * alpha_k would be negative")


# ---------------------------------------------------------------------------
# File parsing


def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def _parse_floats(text: str) -> list:
    """A list of floats: JSON, or comma/space separated, braces tolerated."""
    t = text.strip()
    if t.startswith("["):
        return [float(v) for v in json.loads(t)]
    t = t.strip("{}()")
    parts = [p for p in t.replace(",", " ").split() if p]
    return [float(p) for p in parts]


def _parse_nested(text: str):
    return json.loads(text.strip())


def parse_config_file(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read an experiment config, applying `section.key=value` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    for ov in overrides or []:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override {ov!r} must look like section.key=value")
        key, value = ov.split("=", 1)
        section, name = key.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section.strip(), name.strip(), value.strip())
    for section in ("problem", "oracle", "schedule", "run"):
        if not cp.has_section(section):
            raise ConfigError(f"config file is missing the [{section}] section")

    prob: dict = {}
    for key, raw in cp.items("problem"):
        if key in ("spectrum", "x_star", "targets"):
            prob[key] = _parse_floats(raw)
        elif key == "design":
            prob[key] = _parse_nested(raw)
        else:
            prob[key] = _parse_scalar(raw)

    orac = {key: _parse_scalar(raw) for key, raw in cp.items("oracle")}

    sched: dict = {}
    for key, raw in cp.items("schedule"):
        if key == "alpha":
            pair = _parse_floats(raw)
            if len(pair) != 2:
                raise ConfigError("[schedule] alpha must be a pair: c, a")
            sched["alpha_c"], sched["alpha_a"] = pair
        elif key == "mu":
            pair = _parse_floats(raw)
            if len(pair) != 2:
                raise ConfigError("[schedule] mu must be a pair: m, b")
            sched["mu_m"], sched["mu_b"] = pair
        else:
            sched[key] = _parse_scalar(raw)

    run = dict(cp.items("run"))

    def run_get(key, default=None):
        return run.pop(key) if key in run else default

    lyap_coeff_raw = run_get("lyap_coeff")
    beta_raw = run_get("beta")
    try:
        cfg = ExperimentConfig(
            problem=prob,
            oracle=orac,
            schedule=sched,
            method=str(run_get("method", "")),
            horizon=int(run_get("horizon", 0)),
            replicas=int(run_get("replicas", 0)),
            seed=int(run_get("seed", 0)),
            x0=_parse_floats(run_get("x0", "0")),
            checkpoint_stride=int(run_get("checkpoint_stride", 0)),
            lyapunov=bool(_parse_scalar(run_get("lyapunov", "false"))),
            lyap_coeff=None if lyap_coeff_raw is None else float(lyap_coeff_raw),
            averaged=bool(_parse_scalar(run_get("averaged", "false"))),
            beta=None if beta_raw is None else float(beta_raw),
            divergence_tolerance=float(run_get("divergence_tolerance", 0.01)),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[run] {e}") from e
    if run:
        raise ConfigError(f"[run] unknown keys: {sorted(run)}")
    validate_config(cfg)
    return cfg


def manifest_dict(cfg: ExperimentConfig) -> dict:
    from . import __version__

    return {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "config": asdict(cfg),
    }


def config_from_manifest(manifest: dict) -> ExperimentConfig:
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"manifest format must be {MANIFEST_FORMAT!r}")
    raw = manifest.get("config")
    if not isinstance(raw, dict):
        raise ConfigError("manifest is missing the config block")
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as e:
        raise ConfigError(f"manifest config mismatch: {e}") from e
    validate_config(cfg)
    return cfg


@dataclass
class SweepSpec:
    base: ExperimentConfig
    methods: list = field(default_factory=list)
    alpha_a: list = field(default_factory=list)
    mu_b: list = field(default_factory=list)


def parse_sweep_file(path: str, overrides: list[str] | None = None) -> SweepSpec:
    """A sweep file is an experiment config plus a [sweep] section whose
    methods / alpha_a / mu_b lists span a cartesian grid."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path!r}")
    if not cp.has_section("sweep"):
        raise ConfigError("sweep requires a [sweep] section")
    base = parse_config_file(path, overrides)
    methods = [m.strip() for m in cp.get("sweep", "methods", fallback="").split(",") if m.strip()]
    alpha_a = _parse_floats(cp.get("sweep", "alpha_a", fallback="")) \
        if cp.has_option("sweep", "alpha_a") else []
    mu_b = _parse_floats(cp.get("sweep", "mu_b", fallback="")) \
        if cp.has_option("sweep", "mu_b") else []
    return SweepSpec(base=base, methods=methods or [base.method],
                     alpha_a=alpha_a or [float(base.schedule.get("alpha_a", 0.0))],
                     mu_b=mu_b or [float(base.schedule.get("mu_b", 0.0))])


def sweep_grid(spec: SweepSpec) -> list[ExperimentConfig]:
    import copy

    out = []
    for method in spec.methods:
        for a in spec.alpha_a:
            for b in spec.mu_b:
                cfg = copy.deepcopy(spec.base)
                cfg.method = method
                cfg.schedule["alpha_a"] = float(a)
                cfg.schedule["mu_b"] = float(b)
                out.append(cfg)
    return out
