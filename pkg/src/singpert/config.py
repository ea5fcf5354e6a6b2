"""Scenario configuration files (TOML) and their validation."""
from __future__ import annotations

import copy
import importlib
import math
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .errors import ConfigError
from .system import Method, SimConfig

SCENARIOS = ("example1_saturated", "example2_feedback_opt", "integral_control", "source_seeking", "custom")

_SIM_KEYS = {"t_final", "method", "dt", "rtol", "atol", "divergence_radius", "record_every", "max_step"}
_CHECK_KEYS = {"assumption2", "theorem1", "gradients", "c0_max", "rho_synthesis", "decrease", "network",
               "lemma1", "samples", "gradient_samples", "grid", "decrease_trajectories"}
_RUN_KEYS = {"initial_conditions", "random_initial", "expect_converge", "converge_tol", "workers",
             "consistency", "lyapunov_columns"}
_TOP_KEYS = {"scenario", "seed", "factory", "parameters", "simulation", "checks", "run", "certificate",
             "inputs", "title", "manifest"}


@dataclass
class ScenarioConfig:
    scenario: str
    seed: int
    parameters: dict
    simulation: SimConfig
    checks: dict
    run: dict
    certificate: dict
    inputs: dict
    factory: str | None
    raw: dict = field(repr=False)

    def to_toml(self, extra=None):
        doc = copy.deepcopy(self.raw)
        doc["seed"] = self.seed
        doc.setdefault("simulation", {})["t_final"] = self.simulation.t_final
        if extra:
            doc["manifest"] = extra
        return tomli_w.dumps(doc)


def _table(doc, key, allowed):
    t = doc.get(key, {})
    if not isinstance(t, dict):
        raise ConfigError(f"[{key}] must be a table", key)
    unknown = set(t) - allowed if allowed is not None else set()
    if unknown:
        bad = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key}.{bad}", f"{key}.{bad}")
    return dict(t)


def _positive_number(t, key, prefix):
    v = t[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
        raise ConfigError(f"{prefix}.{key} must be a positive number, got {v!r}", f"{prefix}.{key}")
    return float(v)


def parse_config(doc, seed=None, t_final=None):
    """Validate a parsed TOML document; ``seed``/``t_final`` override file values."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a table", None)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        bad = sorted(unknown)[0]
        raise ConfigError(f"unknown top-level key {bad!r}", bad)
    scenario = doc.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}; got {scenario!r}", "scenario")
    s = doc.get("seed", 0) if seed is None else seed
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {s!r}", "seed")
    factory = doc.get("factory")
    if scenario == "custom" and not isinstance(factory, str):
        raise ConfigError("custom scenarios need factory = \"module:function\"", "factory")

    sim = _table(doc, "simulation", _SIM_KEYS)
    if t_final is not None:
        sim["t_final"] = t_final
    if "t_final" not in sim:
        raise ConfigError("simulation.t_final is required", "simulation.t_final")
    for key in ("t_final", "dt", "rtol", "atol", "divergence_radius", "max_step"):
        if key in sim:
            sim[key] = _positive_number(sim, key, "simulation")
    if "method" in sim:
        try:
            sim["method"] = Method(sim["method"])
        except ValueError:
            raise ConfigError(f"simulation.method must be 'rk4' or 'rk45', got {sim['method']!r}",
                              "simulation.method") from None
    if "record_every" in sim:
        r = sim["record_every"]
        if isinstance(r, bool) or not isinstance(r, int) or r < 1:
            raise ConfigError(f"simulation.record_every must be a positive integer, got {r!r}",
                              "simulation.record_every")
    try:
        simcfg = SimConfig(**sim)
    except ConfigError as exc:
        raise ConfigError(str(exc), f"simulation.{exc.field}") from None

    checks = _table(doc, "checks", _CHECK_KEYS)
    run = _table(doc, "run", _RUN_KEYS)
    ics = run.get("initial_conditions", [])
    if not isinstance(ics, list) or not all(isinstance(p, list) and len(p) == 2 for p in ics):
        raise ConfigError("run.initial_conditions must be a list of [x, z] pairs", "run.initial_conditions")
    if "converge_tol" in run:
        run["converge_tol"] = _positive_number(run, "converge_tol", "run")
    rnd = run.get("random_initial")
    if rnd is not None:
        if not isinstance(rnd, dict) or not isinstance(rnd.get("count"), int) or rnd["count"] < 1:
            raise ConfigError("run.random_initial needs a positive integer count", "run.random_initial.count")
    return ScenarioConfig(
        scenario=scenario, seed=int(s), parameters=_table(doc, "parameters", None), simulation=simcfg,
        checks=checks, run=run, certificate=_table(doc, "certificate", None),
        inputs=_table(doc, "inputs", {"d", "w"}), factory=factory, raw=doc,
    )


def load_config(path, seed=None, t_final=None):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} not found", "path") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", "syntax") from None
    return parse_config(doc, seed, t_final)


def resolve_factory(spec):
    """``"package.module:function"`` to the callable."""
    mod, _, attr = spec.partition(":")
    if not attr:
        raise ConfigError(f"factory {spec!r} must look like module:function", "factory")
    try:
        return getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load factory {spec!r}: {exc}", "factory") from None
