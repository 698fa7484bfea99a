"""YAML run configuration: parsing, defaults and validation.

Every key is checked against a fixed schema; unknown keys and bad values
are reported with the line they appear on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .experiments import Settings
from .model import PRESETS, Convention

EXPERIMENT_PARAMS = {
    "coherence_vs_drive": {"omegas": [0.0, 2.0, 5.0, 7.0, 10.0, 15.0, 25.0, 50.0], "t": 50.0},
    "coherence_vs_time": {"omegas": [0.0, None], "T": 60.0},
    "drive_fluctuations": {"deltas": [0.0, 0.005, 0.01, 0.02], "omega": None, "t": 50.0},
    "spectrum": {"omega": None, "eta0": None, "t": 50.0, "grid": None, "theta_sig": 0.0},
    "angle": {"thetas": None, "theta_sig": 0.0, "omega": 10.0, "eta0": 0.01, "t": 50.0},
    "sensitivity": {"times": [5.0, 10.0, 20.0, 30.0, 40.0, 50.0], "omega": None, "eta0": None,
                    "rel_step": 0.1, "theta_sig": 0.0, "T_all": None, "T_init": 0.0},
}

LIST_PARAMS = {"omegas", "deltas", "times", "thetas", "grid"}

DESCRIPTIONS = {
    "coherence_vs_drive": "|L(t)| against the effective Rabi frequency",
    "coherence_vs_time": "|L(t)| over time with and without the drive",
    "drive_fluctuations": "|L(t)| against relative Rabi-amplitude noise",
    "spectrum": "population change against signal frequency, with depth and FWHM",
    "angle": "on-resonance population change against the laser-phase angle",
    "sensitivity": "one-trial sensitivity against sensing time",
}

SECTIONS = {
    "noise": {"t2star": 3.0, "tau_beta": 25.0, "delta_omega": 0.0, "tau_omega": 100.0},
    "ensemble": {"n_runs": 500, "seed": 1},
    "integrator": {"dt": None, "record_every": 1.0, "program": "reduced",
                   "a1_leakage": "adiabatic", "decay": True},
    "nv": {"delta": None, "gamma_ge": None, "gamma_se": None, "gamma_gs": None},
    "output": {"dir": None, "plots": True},
}

TOP_LEVEL = {"experiment", "preset", "frequency_convention", "threads", "params", *SECTIONS}


class ConfigError(ValueError):
    def __init__(self, message, line=None, source=None):
        where = ""
        if source or line:
            where = f"{source or '<config>'}" + (f":{line}" if line else "") + ": "
        super().__init__(where + message)
        self.line = line


def _to_python(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {'.'.join(path + (key,))!r}", k.start_mark.line + 1)
            out[key] = _to_python(v, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (str(i),), lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


@dataclass
class RunConfig:
    experiment: str
    preset: str
    convention: str
    params: dict
    settings: Settings
    output_dir: str | None = None
    plots: bool = True
    threads: int = 1
    resolved: dict = field(default_factory=dict)


def _number(value, name, *, positive=False, nonneg=False, allow_none=False, integer=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite")
    if integer and int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if positive and not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    if nonneg and value < 0:
        raise ValueError(f"{name} must be non-negative, got {value!r}")
    return int(value) if integer else float(value)


def resolve(raw: dict, lines: dict | None = None, source: str | None = None) -> RunConfig:
    """Validate a config tree and fill in defaults."""
    lines = lines or {}

    def line(*path):
        return lines.get(tuple(path))

    def fail(msg, *path):
        raise ConfigError(msg, line(*path), source)

    if not isinstance(raw, dict):
        fail("config must be a mapping")
    for key in raw:
        if key not in TOP_LEVEL:
            fail(f"unknown key {key!r}; allowed: {sorted(TOP_LEVEL)}", key)
    exp = raw.get("experiment")
    if exp not in EXPERIMENT_PARAMS:
        fail(f"experiment must be one of {sorted(EXPERIMENT_PARAMS)}, got {exp!r}", "experiment")
    preset = raw.get("preset", "zero-field")
    if preset not in PRESETS:
        fail(f"preset must be one of {sorted(PRESETS)}, got {preset!r}", "preset")
    conv = raw.get("frequency_convention", Convention.ORDINARY.value)
    if conv not in [c.value for c in Convention]:
        fail(f"frequency_convention must be 'angular' or 'ordinary', got {conv!r}",
             "frequency_convention")

    def check(value, name, path, **kw):
        try:
            return _number(value, name, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc), line(*path), source) from None

    threads = check(raw.get("threads", 1), "threads", ("threads",), positive=True, integer=True)

    sections = {}
    for name, defaults in SECTIONS.items():
        given = raw.get(name) or {}
        if not isinstance(given, dict):
            fail(f"section {name!r} must be a mapping", name)
        for key in given:
            if key not in defaults:
                fail(f"unknown key {name}.{key}; allowed: {sorted(defaults)}", name, key)
        sections[name] = {**defaults, **given}

    p_defaults = EXPERIMENT_PARAMS[exp]
    p_given = raw.get("params") or {}
    if not isinstance(p_given, dict):
        fail("section 'params' must be a mapping", "params")
    for key in p_given:
        if key not in p_defaults:
            fail(f"unknown key params.{key} for {exp}; allowed: {sorted(p_defaults)}", "params", key)
    params = {**p_defaults, **p_given}

    # fill preset-dependent defaults
    pr = PRESETS[preset]
    for key, fallback in (("omega", pr.best_omega), ("eta0", pr.eta0)):
        if key in params and params[key] is None:
            params[key] = fallback
    if exp == "angle" and params["thetas"] is None:
        params["thetas"] = [round(k * 0.05, 10) * math.pi for k in range(-10, 11)]

    for key, value in params.items():
        path = ("params", key)
        if key in LIST_PARAMS:
            if value is None:
                continue
            if not isinstance(value, list) or not value:
                fail(f"params.{key} must be a non-empty list", *path)
            params[key] = [None if v is None else check(v, f"params.{key}[{i}]", path + (str(i),))
                           for i, v in enumerate(value)]
            numeric = [v for v in params[key] if v is not None]
            if key in ("omegas", "deltas", "times") and any(v < 0 for v in numeric):
                fail(f"params.{key} entries must be non-negative", *path)
        elif key in ("t", "T", "T_all", "rel_step"):
            params[key] = check(value, f"params.{key}", path, positive=True,
                                allow_none=key == "T_all")
        else:
            params[key] = check(value, f"params.{key}", path, nonneg=key not in ("theta_sig",))

    noise = sections["noise"]
    for key in ("t2star", "tau_beta", "tau_omega"):
        noise[key] = check(noise[key], f"noise.{key}", ("noise", key), positive=True)
    noise["delta_omega"] = check(noise["delta_omega"], "noise.delta_omega",
                                 ("noise", "delta_omega"), nonneg=True)
    ens = sections["ensemble"]
    ens["n_runs"] = check(ens["n_runs"], "ensemble.n_runs", ("ensemble", "n_runs"),
                          positive=True, integer=True)
    ens["seed"] = check(ens["seed"], "ensemble.seed", ("ensemble", "seed"), nonneg=True,
                        integer=True)
    if ens["seed"] >= 2 ** 64:
        fail("ensemble.seed must fit in 64 bits", "ensemble", "seed")
    integ = sections["integrator"]
    integ["dt"] = check(integ["dt"], "integrator.dt", ("integrator", "dt"), positive=True,
                        allow_none=True)
    integ["record_every"] = check(integ["record_every"], "integrator.record_every",
                                  ("integrator", "record_every"), positive=True)
    if integ["program"] not in ("reduced", "full"):
        fail("integrator.program must be 'reduced' or 'full'", "integrator", "program")
    if integ["a1_leakage"] not in ("adiabatic", "none"):
        fail("integrator.a1_leakage must be 'adiabatic' or 'none'", "integrator", "a1_leakage")
    if not isinstance(integ["decay"], bool):
        fail("integrator.decay must be true or false", "integrator", "decay")
    overrides = {}
    for key, value in sections["nv"].items():
        if value is None:
            continue
        positive = key == "delta"
        overrides[key] = check(value, f"nv.{key}", ("nv", key), positive=positive,
                               nonneg=not positive)
        if key == "delta":
            overrides[key] *= Convention(conv).factor
    out = sections["output"]
    if not isinstance(out["plots"], bool):
        fail("output.plots must be true or false", "output", "plots")

    settings = Settings(
        preset=preset, convention=conv, t2star=noise["t2star"], tau_beta=noise["tau_beta"],
        delta_omega=noise["delta_omega"], tau_omega=noise["tau_omega"],
        n_runs=ens["n_runs"], seed=ens["seed"], workers=threads, dt=integ["dt"],
        record_every=integ["record_every"], program=integ["program"],
        a1_leakage=integ["a1_leakage"], decay=integ["decay"], nv_overrides=overrides,
    )
    resolved = {
        "experiment": exp, "preset": preset, "frequency_convention": conv, "threads": threads,
        "params": params, **sections,
    }
    return RunConfig(exp, preset, conv, params, settings, out["dir"], out["plots"], threads,
                     resolved)


def load_tree(text: str, source: str | None = None):
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    if node is None:
        raise ConfigError("empty config", None, source)
    lines = {}
    try:
        tree = _to_python(node, (), lines)
    except ConfigError as exc:
        raise ConfigError(str(exc), exc.line, source) from None
    return tree, lines


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    tree, lines = load_tree(path.read_text(), str(path))
    return resolve(tree, lines, str(path))


def parse_text(text: str) -> RunConfig:
    tree, lines = load_tree(text)
    return resolve(tree, lines)
