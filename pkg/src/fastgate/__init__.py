"""Two-ion light-shift gate toolkit: models, solvers, search, compilation."""

from fastgate.model import (
    BRANCHES,
    ConfigError,
    DriveGeometry,
    PulseShape,
    SimOptions,
    SolverError,
    SpinCoupling,
    TrapSpec,
    ValidatedConfig,
    envelope,
    pulse_area,
    validate,
)
from fastgate.config import config_from_dict, config_to_dict, load_config
from fastgate.ldsolver import entangling_phase, ld_gate_error, propagate_ld

__version__ = "0.1.0"

__all__ = [
    "BRANCHES",
    "ConfigError",
    "DriveGeometry",
    "PulseShape",
    "SimOptions",
    "SolverError",
    "SpinCoupling",
    "TrapSpec",
    "ValidatedConfig",
    "config_from_dict",
    "config_to_dict",
    "entangling_phase",
    "envelope",
    "ld_gate_error",
    "load_config",
    "propagate_ld",
    "pulse_area",
    "validate",
    "__version__",
]
