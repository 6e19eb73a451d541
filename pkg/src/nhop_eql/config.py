# Experiment configuration: JSON schema, size-band defaults, validation
# and hashing.
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

from .ensemble import ScheduleSet
from .environments import (
    CliffWalkSpec,
    ErdosRenyiSpec,
    SisoSpec,
    TabularEnvironment,
    build_cliffwalk_env,
    build_er_env,
    build_siso_env,
)
from .estimation import SamplingConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for malformed or out-of-range experiment configurations."""


# Recommended hyperparameter bands by state-space size. Values outside a
# band produce warnings, never errors.
_BANDS = {
    "small": dict(max_states=20, l=(1, 5), K=(2, 3), c1=(1e2, 5e2),
                  c2=(0.9, 0.95), c3=(0.01, 0.1), c4=(1e2, 5e2),
                  defaults=dict(l=5, K=3, c1=100.0, c3=0.01, c4=100.0,
                                eps=(0.9, 0.95, 0.95))),
    "modest": dict(max_states=500, l=(5, 10), K=(3, 5), c1=(1e2, 1e3),
                   c2=(0.95, 0.99), c3=(0.01, 0.05), c4=(1e2, 1e3),
                   defaults=dict(l=10, K=4, c1=100.0, c3=0.01, c4=1000.0,
                                 eps=(0.95, 0.97, 0.97, 0.99))),
    "large": dict(max_states=None, l=(10, 20), K=(5, 8), c1=(1e3, 1e4),
                  c2=(0.99, 0.999), c3=(0.005, 0.01), c4=(5e3, 1e4),
                  defaults=dict(l=20, K=6, c1=1000.0, c3=0.01, c4=10000.0,
                                eps=(0.99, 0.99, 0.995, 0.995, 0.999, 0.999))),
}

_ALL_CHECKS = ("bounds", "prop3", "prop4", "variance_vs_k", "adc", "weights")


@dataclass(frozen=True)
class ExperimentConfig:
    env_family: str
    env_params: dict
    sampling: SamplingConfig
    schedules: ScheduleSet
    gamma: float = 0.95
    seeds: tuple[int, ...] = (0,)
    probe_cells: tuple[tuple[int, int], ...] = ()
    output_dir: str = "out"
    checks: tuple[str, ...] = _ALL_CHECKS
    max_iters: int = 200_000
    band: str = "modest"

    def config_hash(self) -> str:
        """Stable digest of the fully-resolved configuration."""
        payload = {
            "env_family": self.env_family,
            "env_params": self.env_params,
            "sampling": asdict(self.sampling),
            "schedules": asdict(self.schedules),
            "gamma": self.gamma,
            "seeds": list(self.seeds),
            "probe_cells": [list(c) for c in self.probe_cells],
            "checks": list(self.checks),
            "max_iters": self.max_iters,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def build_env(self) -> TabularEnvironment:
        return build_environment(self.env_family, self.env_params)


def build_environment(family: str, params: dict) -> TabularEnvironment:
    if family == "er":
        return build_er_env(ErdosRenyiSpec(**params))
    if family == "cliffwalk":
        return build_cliffwalk_env(CliffWalkSpec(**params))
    if family == "siso":
        return build_siso_env(SisoSpec(**params))
    raise ConfigError(f"unknown environment family '{family}'")


def _num_states(family: str, params: dict) -> int:
    if family == "er":
        return int(params["num_states"])
    if family == "cliffwalk":
        rows = int(params["rows"])
        cols = int(params.get("cols") or 3 * rows)
        return rows * cols
    if family == "siso":
        return int(params["buffer_size"]) + 1
    raise ConfigError(f"unknown environment family '{family}'")


def _band_for(num_states: int) -> str:
    for name in ("small", "modest"):
        if num_states <= _BANDS[name]["max_states"]:
            return name
    return "large"


def _warn_range(name: str, value: float, lo: float, hi: float, band: str) -> None:
    if not (lo <= value <= hi):
        log.warning("%s=%g outside the recommended %s-network band [%g, %g]",
                    name, value, band, lo, hi)


def parse_config(path) -> ExperimentConfig:
    """Load, default-fill and validate an experiment file.

    The file is JSON with top-level keys ``environment`` (required:
    ``family`` plus family parameters), ``sampling``, ``schedules``,
    ``gamma``, ``seeds``, ``probe_cells``, ``output_dir``, ``checks`` and
    ``max_iters``. Missing hyperparameters are filled from the size band
    matching the state-space size; soft band violations warn, hard
    violations (gamma outside (0, 1), bad types) raise ConfigError naming
    the field.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}")
    return resolve_config(raw)


def resolve_config(raw: dict) -> ExperimentConfig:
    if "environment" not in raw or "family" not in raw["environment"]:
        raise ConfigError("missing field: environment.family")
    env = dict(raw["environment"])
    family = env.pop("family")
    try:
        S = _num_states(family, env)
    except KeyError as exc:
        raise ConfigError(f"missing environment field: {exc.args[0]}")

    band = _band_for(S)
    d = _BANDS[band]["defaults"]

    samp_raw = dict(raw.get("sampling", {}))
    sch_raw = dict(raw.get("schedules", {}))

    K = int(samp_raw.get("num_environments", d["K"]))
    l = int(samp_raw.get("trajectory_length", d["l"]))
    try:
        sampling = SamplingConfig(
            trajectory_length=l,
            min_visits=int(samp_raw.get("min_visits", 40)),
            num_environments=K,
            order_set=tuple(samp_raw.get("order_set", ())),
            max_total_samples=int(samp_raw.get("max_total_samples", 1_000_000)),
            visit_granularity=samp_raw.get("visit_granularity", "triple"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sampling config: {exc}")

    eps_default = _fit_eps(d["eps"], K)
    try:
        schedules = ScheduleSet(
            c1=float(sch_raw.get("c1", d["c1"])),
            epsilon_decays=tuple(sch_raw.get("epsilon_decays", eps_default)),
            c3=float(sch_raw.get("c3", d["c3"])),
            update_form=sch_raw.get("update_form", "exp"),
            c4=float(sch_raw.get("c4", d["c4"])),
            u_constant=float(sch_raw.get("u_constant", 0.5)),
        ).with_learners(K)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid schedules config: {exc}")

    gamma = float(raw.get("gamma", 0.95))
    if not (0.0 < gamma < 1.0):
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")

    seeds = tuple(int(s) for s in raw.get("seeds", [0]))
    if not seeds:
        raise ConfigError("seeds must be a nonempty list")

    probes = tuple((int(s), int(a)) for s, a in raw.get("probe_cells", []))
    checks = tuple(raw.get("checks", _ALL_CHECKS))
    unknown = set(checks) - set(_ALL_CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks: {sorted(unknown)}")

    max_iters = int(raw.get("max_iters", 200_000))
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")

    bands = _BANDS[band]
    _warn_range("trajectory_length", l, *bands["l"], band)
    _warn_range("num_environments", K, *bands["K"], band)
    _warn_range("c1", schedules.c1, *bands["c1"], band)
    for c2 in schedules.epsilon_decays:
        _warn_range("epsilon_decay", c2, *bands["c2"], band)
    _warn_range("c3", schedules.c3, *bands["c3"], band)
    if schedules.update_form == "exp":
        _warn_range("c4", schedules.c4, *bands["c4"], band)

    return ExperimentConfig(
        env_family=family,
        env_params=env,
        sampling=sampling,
        schedules=schedules,
        gamma=gamma,
        seeds=seeds,
        probe_cells=probes,
        output_dir=str(raw.get("output_dir", "out")),
        checks=checks,
        max_iters=max_iters,
        band=band,
    )


def _fit_eps(eps: tuple[float, ...], K: int) -> tuple[float, ...]:
    if len(eps) >= K:
        return tuple(eps[:K])
    return tuple(eps) + (eps[-1],) * (K - len(eps))
