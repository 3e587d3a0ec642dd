"""Experiment configuration: a small INI file merged over per-plant defaults.

Values are Python literals (numbers, strings, lists). Every setting has a
default, so an empty file with only ``[run] plant = ...`` is a complete
experiment. The config hash is taken over the merged settings, so two files
that differ only in layout or comments hash the same.
"""

from __future__ import annotations

import ast
import configparser
import copy
import hashlib
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .contract import SamplerSpec
from .darepc import DarepcParams
from .envgrid import EnvGrid
from .errors import InvalidParam
from .geometry import HyperRect
from .systems import autoland, dronerace
from .systems.base import ClosedLoopSystem, Requirement

__all__ = ["ConfigError", "Experiment", "DEFAULTS", "load_config", "parse_config", "build_experiment"]


class ConfigError(InvalidParam):
    """Malformed or out-of-domain configuration."""


def _box(b: HyperRect) -> list:
    return [[float(lo), float(hi)] for lo, hi in zip(b.lo, b.hi)]


_COMMON = {
    "run": {"plant": "autoland", "seed": 0, "out": "results", "jobs": 1},
    "darepc": {"removal_threshold": 0.8, "max_state_depth": 12, "max_env_shrinks": 23,
               "probe_budget": 200, "horizon": None, "max_generators": None},
    "validate": {"n_sims": 30, "n_outside": 0},
    "simulate": {"x0": None, "env": None, "horizon": None},
    "sweep": {"resolution": [4, 4], "n_per_cell": 10},
    "observer": {},
}

DEFAULTS = {
    "autoland": {
        **_COMMON,
        "initial_set": {"box": "X01"},
        "environment": {"bounds": _box(autoland.ENV_BOUNDS), "resolution": [16, 16],
                        "nominal": list(autoland.NOMINAL_ENV)},
        "requirement": {"half_width_start": [10.0, 5.0], "half_width_end": [1.0, 1.0]},
        "contract": {"pr": 0.9, "epsilon": 0.01, "delta": 0.001, "feature_map": "affine",
                     "n_samples": None, "sampler": "uniform_box", "tube_radius": None},
    },
    "dronerace": {
        **_COMMON,
        "run": {**_COMMON["run"], "plant": "dronerace"},
        "validate": {"n_sims": 20, "n_outside": 20},
        "initial_set": {"box": "X0"},
        "environment": {"bounds": _box(dronerace.ENV_BOUNDS), "resolution": [16, 16],
                        "nominal": list(dronerace.NOMINAL_ENV)},
        "requirement": {"half_width": 0.3, "gates": [list(g) for g in dronerace.GATES],
                        "speed": dronerace.SPEED},
        "contract": {"pr": 0.7, "epsilon": 0.02, "delta": 0.01, "feature_map": "affine",
                     "n_samples": None, "sampler": "reference_tube",
                     "tube_radius": [0.15, 0.2, 0.1, 0.5, 0.15, 0.2, 0.1, 0.5, 0.15, 0.2, 0.15, 0.3]},
    },
}

_NAMED_BOXES = {
    "autoland": {"X01": autoland.X01, "X02": autoland.X02},
    "dronerace": {"X0": dronerace.X0},
}


def _literal(text: str) -> Any:
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def parse_config(text: str, seed: Optional[int] = None, out: Optional[str] = None) -> dict:
    """Merge the INI ``text`` over the defaults of its plant."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    plant = _literal(cp.get("run", "plant", fallback="autoland"))
    if plant not in DEFAULTS:
        raise ConfigError(f"unknown plant {plant!r}")
    merged = copy.deepcopy(DEFAULTS[plant])
    for section in cp.sections():
        if section not in merged:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if section != "observer" and key not in merged[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            merged[section][key] = _literal(raw)
    if seed is not None:
        merged["run"]["seed"] = int(seed)
    if out is not None:
        merged["run"]["out"] = str(out)
    if not isinstance(merged["run"]["seed"], int):
        raise ConfigError("run.seed must be an integer")
    return merged


def load_config(path: Optional[str], seed: Optional[int] = None, out: Optional[str] = None) -> dict:
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, seed, out)


def canonical_text(cfg: dict) -> str:
    """One ``section.key = value`` line per setting, sorted; ``run.out`` excluded."""
    lines = []
    for section in sorted(cfg):
        for key in sorted(cfg[section]):
            if (section, key) in (("run", "out"), ("run", "jobs")):
                continue
            lines.append(f"{section}.{key} = {cfg[section][key]!r}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]


@dataclass
class Experiment:
    cfg: dict
    plant: ClosedLoopSystem
    observer: Any
    requirement: Requirement
    initial_set: HyperRect
    grid: EnvGrid
    sampler: SamplerSpec
    params: DarepcParams
    hash: str

    @property
    def seed(self) -> int:
        return int(self.cfg["run"]["seed"])

    @property
    def horizon(self) -> int:
        h = self.cfg["darepc"]["horizon"]
        return self.plant.horizon if h is None else int(h)


def _as_box(value, plant_id: str, what: str) -> HyperRect:
    if isinstance(value, str):
        try:
            return _NAMED_BOXES[plant_id][value]
        except KeyError:
            raise ConfigError(f"unknown named box {value!r} for {what}") from None
    try:
        return HyperRect.from_bounds(value)
    except Exception as exc:
        raise ConfigError(f"bad box for {what}: {exc}") from exc


def build_experiment(cfg: dict) -> Experiment:
    """Instantiate plant, observer, requirement, grid and parameters."""
    plant_id = cfg["run"]["plant"]
    obs_kw = dict(cfg["observer"])
    try:
        if plant_id == "autoland":
            plant = autoland.make_autoland()
            rq = cfg["requirement"]
            requirement = autoland.autoland_requirement(plant.horizon, rq["half_width_start"], rq["half_width_end"])
            observer = autoland.AutoLandObserver(**{k: tuple(v) if isinstance(v, list) else v
                                                    for k, v in obs_kw.items()})
        else:
            rq = cfg["requirement"]
            ref = dronerace.DroneReference(gates=tuple(tuple(g) for g in rq["gates"]), speed=float(rq["speed"]))
            plant = dronerace.make_dronerace(ref)
            requirement = dronerace.drone_requirement(ref, float(rq["half_width"]))
            observer = dronerace.DroneObserver(ref, **{k: tuple(v) if isinstance(v, list) else v
                                                       for k, v in obs_kw.items()})
    except TypeError as exc:
        raise ConfigError(f"bad observer constant: {exc}") from exc

    X0 = _as_box(cfg["initial_set"]["box"], plant_id, "initial_set.box")
    if X0.ndim != plant.n_state:
        raise ConfigError(f"initial set has {X0.ndim} dims, plant has {plant.n_state}")
    if not plant.state_domain.contains(X0):
        raise ConfigError("initial set leaves the plant's state domain")
    env = cfg["environment"]
    bounds = _as_box(env["bounds"], plant_id, "environment.bounds")
    if bounds.ndim != plant.env_bounds.ndim or not plant.env_bounds.contains(bounds):
        raise ConfigError("environment bounds leave the plant's environment box")
    try:
        grid = EnvGrid.uniform(bounds, tuple(env["resolution"]), tuple(env["nominal"]))
    except InvalidParam as exc:
        raise ConfigError(str(exc)) from exc

    c = cfg["contract"]
    seed = int(cfg["run"]["seed"])
    try:
        if c["sampler"] == "reference_tube":
            radius = c["tube_radius"]
            if radius is None or len(radius) != plant.n_state:
                raise ConfigError("contract.tube_radius needs one entry per state dim")
            sampler = SamplerSpec("reference_tube", plant.state_domain, grid, seed,
                                  np.asarray(radius, dtype=float), plant.reference_states())
        else:
            sampler = SamplerSpec(c["sampler"], plant.state_domain, grid, seed)
        d = cfg["darepc"]
        params = DarepcParams(pr=float(c["pr"]), epsilon=float(c["epsilon"]), delta=float(c["delta"]),
                              removal_threshold=float(d["removal_threshold"]),
                              max_state_depth=int(d["max_state_depth"]),
                              max_env_shrinks=int(d["max_env_shrinks"]),
                              horizon=d["horizon"], probe_budget=int(d["probe_budget"]), seed=seed,
                              feature_map_id=str(c["feature_map"]), n_samples=c["n_samples"],
                              max_generators=d["max_generators"], jobs=int(cfg["run"]["jobs"]))
    except ConfigError:
        raise
    except InvalidParam as exc:
        raise ConfigError(str(exc)) from exc
    if params.pr + params.epsilon >= 1.0:
        raise ConfigError("contract.pr + contract.epsilon must be below 1")
    return Experiment(cfg, plant, observer, requirement, X0, grid, sampler, params, config_hash(cfg))
