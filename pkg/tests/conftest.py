"""Shared fixtures: reference pulse shapes and calibrated configs.

Heavy grid-solver results are session-scoped so the acceptance tests and
the unit tests can share a single propagation run.
"""
import numpy as np
import pytest

from fastgate.model import PulseShape, SimOptions, TrapSpec, validate
from fastgate.optimizer import calibrated_config

# trap frequencies used by the two tabulated gate shapes
F_C_SLOW = 1.9243e6    # Hz, five-segment and adiabatic configurations
F_C_FAST = 1.8615e6    # Hz, seven-segment configuration

NU_SLOW = 2.6301e6
NU_FAST = 6.3802e6


def five_segment_pulse(omega_peak: float = 1e6, nu: float = NU_SLOW) -> PulseShape:
    # 1.59 us stepped shape: mirror-symmetric, 5 ns edges
    return PulseShape(
        segments=((82.1e-9, 0.445), (299.9e-9, 0.838), (819.5e-9, 1.0)),
        symmetric=True, edge_time=5e-9, omega_peak=omega_peak, nu=nu)


def seven_segment_pulse(omega_peak: float = 1e6, nu: float = NU_FAST) -> PulseShape:
    # 483 ns stepped shape
    return PulseShape(
        segments=((71.4e-9, 0.284), (64.5e-9, 0.617), (46.7e-9, 0.862),
                  (112.3e-9, 1.0)),
        symmetric=True, edge_time=5e-9, omega_peak=omega_peak, nu=nu)


def adiabatic_pulse(omega_peak: float = 1e6) -> PulseShape:
    """20 us single-segment trapezoid tuned for clean closure.

    The flat section spans 37 trap periods so the slow loop closes exactly
    once (beat-trap detuning times duration = 1) and the beat frequency is
    commensurate with the segment (nu * duration = 38), which nulls the
    drive's zero-frequency light-shift integral identically.
    """
    seg = 37.0 / F_C_SLOW
    return PulseShape(segments=((seg, 1.0),), symmetric=True,
                      edge_time=20e-6 - seg, omega_peak=omega_peak,
                      nu=F_C_SLOW * 38.0 / 37.0)


def slow_trap(eta_c: float = 0.126, **kw) -> TrapSpec:
    return TrapSpec(f_c=F_C_SLOW, eta_c=eta_c, **kw)


def fast_trap(eta_c: float = 0.126, **kw) -> TrapSpec:
    return TrapSpec(f_c=F_C_FAST, eta_c=eta_c, **kw)


@pytest.fixture(scope="session")
def cfg_159():
    return validate(slow_trap(), five_segment_pulse())


@pytest.fixture(scope="session")
def cal_159(cfg_159):
    return calibrated_config(cfg_159)


@pytest.fixture(scope="session")
def cfg_483():
    return validate(fast_trap(), seven_segment_pulse())


@pytest.fixture(scope="session")
def cal_483(cfg_483):
    return calibrated_config(cfg_483)


@pytest.fixture(scope="session")
def cal_adiabatic():
    return calibrated_config(validate(slow_trap(), adiabatic_pulse()))
