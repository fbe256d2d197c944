"""Configuration file loading and solution-document serialization.

One YAML schema shared by every entry point: top-level sections `trap`,
`pulse`, and optional `coupling` / `sim`.  Unknown keys are rejected with
the full dotted path so typos surface immediately.
"""
from __future__ import annotations

from dataclasses import fields

import yaml

from .model import (ConfigError, PulseShape, SimOptions, SpinCoupling,
                    TrapSpec, ValidatedConfig, validate)

_SECTIONS = ("trap", "pulse", "coupling", "sim")


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}", "unknown key")


def _build(cls, section: str, data: dict, convert=None):
    """Instantiate a dataclass from a mapping, rejecting unknown keys."""
    allowed = {f.name for f in fields(cls)}
    _check_keys(section, data, allowed)
    kwargs = dict(data)
    if convert:
        for name, fn in convert.items():
            if name in kwargs:
                kwargs[name] = fn(kwargs[name])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from exc


def _to_segments(raw) -> tuple[tuple[float, float], ...]:
    if not isinstance(raw, (list, tuple)):
        raise ConfigError("pulse.segments", "expected a list of [duration, amplitude]")
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"pulse.segments[{i}]",
                              "expected a [duration, amplitude] pair")
        out.append((float(item[0]), float(item[1])))
    return tuple(out)


def _to_complex(raw) -> complex:
    if isinstance(raw, (list, tuple)) and len(raw) == 2:
        return complex(float(raw[0]), float(raw[1]))
    return complex(raw)


def config_from_dict(doc: dict) -> ValidatedConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    _check_keys("config", doc, set(_SECTIONS))
    if "trap" not in doc:
        raise ConfigError("trap", "missing section")
    if "pulse" not in doc:
        raise ConfigError("pulse", "missing section")

    trap = _build(TrapSpec, "trap", doc["trap"])
    pulse = _build(PulseShape, "pulse", doc["pulse"],
                   convert={"segments": _to_segments})
    coupling = _build(SpinCoupling, "coupling", doc.get("coupling", {}))
    sim = _build(SimOptions, "sim", doc.get("sim", {}),
                 convert={"alpha_c": _to_complex, "alpha_s": _to_complex})
    return validate(trap, pulse, coupling, sim)


def load_config(path: str) -> ValidatedConfig:
    """Read and validate a YAML configuration file."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"YAML parse error: {exc}")
    return config_from_dict(doc)


def pulse_to_dict(pulse: PulseShape) -> dict:
    return {
        "segments": [[d, a] for d, a in pulse.segments],
        "symmetric": pulse.symmetric,
        "edge_time": pulse.edge_time,
        "omega_peak": pulse.omega_peak,
        "nu": pulse.nu,
        "phi_half": pulse.phi_half,
    }


def pulse_from_dict(doc: dict) -> PulseShape:
    return _build(PulseShape, "pulse", doc, convert={"segments": _to_segments})


def config_to_dict(cfg: ValidatedConfig) -> dict:
    return {
        "trap": {
            "f_c": cfg.trap.f_c,
            "eta_c": cfg.trap.eta_c,
            "spacing_periods": cfg.trap.spacing_periods,
            "nbar_c": cfg.trap.nbar_c,
            "nbar_s": cfg.trap.nbar_s,
        },
        "pulse": pulse_to_dict(cfg.pulse),
        "coupling": {
            "lambda_down": cfg.coupling.lambda_down,
            "lambda_up": cfg.coupling.lambda_up,
        },
        "sim": {
            "phi0_grid_size": cfg.sim.phi0_grid_size,
            "grid_points": cfg.sim.grid_points,
            "grid_extent": cfg.sim.grid_extent,
            "time_step": cfg.sim.time_step,
            "initial_state": cfg.sim.initial_state,
            "alpha_c": [cfg.sim.alpha_c.real, cfg.sim.alpha_c.imag],
            "alpha_s": [cfg.sim.alpha_s.real, cfg.sim.alpha_s.imag],
            "thermal_samples": cfg.sim.thermal_samples,
            "rng_seed": cfg.sim.rng_seed,
            "traj_samples": cfg.sim.traj_samples,
        },
    }
