"""Domain types, derived quantities, and validated configuration.

Everything downstream (both solvers, the optimizer, the waveform compiler)
consumes a ValidatedConfig rather than raw user input, so all invariant
checking lives here.  Frequencies are Hz on input and converted to angular
rad/s in the derived fields; times are seconds throughout.
"""
from __future__ import annotations

import functools
import hashlib
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

ROOT3 = math.sqrt(3.0)

# Spin branch order used everywhere: ion1, ion2 with d = lower qubit state.
BRANCHES = ("dd", "du", "ud", "uu")


class ConfigError(ValueError):
    """Raised on invalid configuration; `field_name` names the offender."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class SolverError(RuntimeError):
    """Raised when a numerical routine cannot produce a trustworthy result."""


@dataclass(frozen=True)
class TrapSpec:
    """Axial trap and mode geometry for the two-ion crystal."""

    f_c: float                      # centre-of-mass axial frequency, Hz
    eta_c: float = 0.126            # COM Lamb-Dicke parameter
    spacing_periods: float = 12.5   # ion separation in standing-wave periods
    nbar_c: float = 0.0             # initial mean thermal occupation, COM
    nbar_s: float = 0.0             # same, stretch

    @property
    def f_s(self) -> float:
        """Stretch-mode frequency, sqrt(3) times the COM frequency."""
        return ROOT3 * self.f_c

    @property
    def eta_s(self) -> float:
        # eta scales as 1/sqrt(mode frequency)
        return self.eta_c * 3.0 ** (-0.25)

    @property
    def omega_c(self) -> float:
        return 2.0 * math.pi * self.f_c

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.f_s

    def ion_phase(self, ion: int) -> float:
        """Standing-wave phase of ion `ion` (0 or 1) at its equilibrium site.

        Half-integer spacing makes the two values differ by exactly pi,
        which the modulo arithmetic below preserves in floating point.
        """
        return 2.0 * math.pi * ((self.spacing_periods * ion) % 1.0)


@dataclass(frozen=True)
class PulseShape:
    """Segmented drive envelope with linear edges.

    `segments` lists (duration_s, relative_amplitude) pairs.  When
    `symmetric` is set the list is the first half only, its last entry
    being the centre segment; the full sequence mirrors everything before
    the centre.  A linear ramp of width `edge_time` starts at each segment
    boundary (rising from zero at t=0), and a final fall ramp is appended,
    so the total duration is sum(full durations) + edge_time.
    """

    segments: tuple[tuple[float, float], ...]
    symmetric: bool = True
    edge_time: float = 5e-9         # 0%-100% linear ramp width, s
    omega_peak: float = 1e6         # peak differential drive, rad/s
    nu: float = 2e6                 # beat-note frequency, Hz
    phi_half: float = 0.0           # analysis-pulse phase hint, rad

    def __post_init__(self):
        object.__setattr__(
            self, "segments",
            tuple((float(d), float(a)) for d, a in self.segments))

    def full_segments(self) -> tuple[tuple[float, float], ...]:
        if self.symmetric and len(self.segments) > 1:
            return self.segments + self.segments[-2::-1]
        return self.segments

    @property
    def t_total(self) -> float:
        """Full gate duration including the final fall ramp, s."""
        return sum(d for d, _ in self.full_segments()) + self.edge_time

    @property
    def omega_nu(self) -> float:
        return 2.0 * math.pi * self.nu


@dataclass(frozen=True)
class SpinCoupling:
    """Light-shift coupling coefficients for the two qubit states."""

    lambda_down: float = 1.0
    lambda_up: float = -1.0

    def branch_pairs(self) -> tuple[tuple[float, float], ...]:
        """(lambda_ion1, lambda_ion2) for each branch in BRANCHES order."""
        lo, hi = self.lambda_down, self.lambda_up
        return ((lo, lo), (lo, hi), (hi, lo), (hi, hi))


@dataclass(frozen=True)
class DriveGeometry:
    """Normal-mode decomposition of the drive on the two-ion crystal.

    b[j][m] couples ion j to mode m (0 = COM, 1 = stretch); theta[j] is the
    standing-wave phase at ion j's site.
    """

    theta: tuple[float, float]
    b: tuple[tuple[float, float], tuple[float, float]] = (
        (1 / math.sqrt(2), 1 / math.sqrt(2)),
        (1 / math.sqrt(2), -1 / math.sqrt(2)),
    )

    @property
    def antiphase(self) -> bool:
        d = (self.theta[1] - self.theta[0]) % (2 * math.pi)
        return abs(d - math.pi) < 1e-9


@dataclass(frozen=True)
class SimOptions:
    """Numerical knobs shared by the solvers."""

    phi0_grid_size: int = 16
    grid_points: int = 256          # per motional axis, power of two
    grid_extent: float = 10.0       # base half-width in ground-state widths
    time_step: float | None = None  # s; None = automatic audit-passing step
    initial_state: str = "ground"   # ground | coherent | thermal
    alpha_c: complex = 0j           # coherent initial displacement, COM
    alpha_s: complex = 0j
    thermal_samples: int = 1
    rng_seed: int = 0
    traj_samples: int = 257         # sampled trajectory resolution


@dataclass(frozen=True)
class ValidatedConfig:
    """Invariant-checked configuration with derived quantities materialized."""

    trap: TrapSpec
    pulse: PulseShape
    coupling: SpinCoupling
    sim: SimOptions
    geometry: DriveGeometry
    # derived, SI
    f_s: float
    eta_s: float
    t_gate: float
    omega_c: float
    omega_s: float
    omega_nu: float

    def content_hash(self) -> str:
        """sha256 over the packed numeric content, for provenance tracking."""
        parts: list[float] = [
            self.trap.f_c, self.trap.eta_c, self.trap.spacing_periods,
            self.trap.nbar_c, self.trap.nbar_s,
            float(len(self.pulse.segments)), float(self.pulse.symmetric),
        ]
        for d, a in self.pulse.segments:
            parts += [d, a]
        parts += [self.pulse.edge_time, self.pulse.omega_peak, self.pulse.nu,
                  self.pulse.phi_half,
                  self.coupling.lambda_down, self.coupling.lambda_up,
                  float(self.sim.phi0_grid_size), float(self.sim.grid_points),
                  self.sim.grid_extent,
                  -1.0 if self.sim.time_step is None else self.sim.time_step,
                  float(self.sim.thermal_samples), float(self.sim.rng_seed),
                  self.sim.alpha_c.real, self.sim.alpha_c.imag,
                  self.sim.alpha_s.real, self.sim.alpha_s.imag]
        blob = struct.pack(f"<{len(parts)}d", *parts)
        blob += self.sim.initial_state.encode()
        return hashlib.sha256(blob).hexdigest()


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def validate(trap, pulse=None, coupling=None, sim=None) -> ValidatedConfig:
    """Check all invariants and materialize derived quantities.

    Accepts either (TrapSpec, PulseShape[, SpinCoupling, SimOptions]) or an
    existing ValidatedConfig, in which case the same checks re-run and an
    equal configuration is returned (validation is idempotent).
    """
    if isinstance(trap, ValidatedConfig):
        cfg = trap
        return validate(cfg.trap, cfg.pulse, cfg.coupling, cfg.sim)
    if pulse is None:
        raise ConfigError("pulse", "missing pulse shape")
    coupling = coupling if coupling is not None else SpinCoupling()
    sim = sim if sim is not None else SimOptions()

    if not math.isfinite(trap.f_c) or trap.f_c <= 0:
        raise ConfigError("trap.f_c", "must be a positive frequency in Hz")
    if not 0 < trap.eta_c < 1:
        raise ConfigError("trap.eta_c", "must lie in (0, 1)")
    if trap.nbar_c < 0:
        raise ConfigError("trap.nbar_c", "must be >= 0")
    if trap.nbar_s < 0:
        raise ConfigError("trap.nbar_s", "must be >= 0")
    # half-integer site spacing keeps the forces on the two ions anti-phase
    if abs((trap.spacing_periods % 1.0) - 0.5) > 1e-9:
        raise ConfigError("trap.spacing_periods",
                          f"must be a half-integer (k + 1/2), got {trap.spacing_periods}")

    segs = pulse.segments
    if len(segs) == 0:
        raise ConfigError("pulse.segments", "no segments")
    for i, (dur, amp) in enumerate(segs):
        if not math.isfinite(dur) or dur <= 0:
            raise ConfigError(f"pulse.segments[{i}].duration", "must be > 0")
        if not 0.0 <= amp <= 1.0:
            raise ConfigError(f"pulse.segments[{i}].amplitude",
                              f"must lie in [0, 1], got {amp}")
    peak = max(a for _, a in segs)
    if abs(peak - 1.0) > 1e-9:
        raise ConfigError("pulse.segments",
                          f"peak relative amplitude must equal 1 (got {peak}); "
                          "omega_peak carries the scale")
    if pulse.edge_time < 0:
        raise ConfigError("pulse.edge_time", "must be >= 0")
    min_dur = min(d for d, _ in pulse.full_segments())
    if pulse.edge_time > min_dur * (1 + 1e-12):
        raise ConfigError("pulse.edge_time",
                          f"{pulse.edge_time} exceeds shortest segment {min_dur}")
    if not math.isfinite(pulse.nu) or pulse.nu <= 0:
        raise ConfigError("pulse.nu", "must be a positive frequency in Hz")
    if pulse.omega_peak < 0 or not math.isfinite(pulse.omega_peak):
        raise ConfigError("pulse.omega_peak", "must be >= 0 (rad/s)")

    if sim.phi0_grid_size < 2:
        raise ConfigError("sim.phi0_grid_size", "need at least 2 samples")
    if not _is_power_of_two(sim.grid_points):
        raise ConfigError("sim.grid_points",
                          f"must be a power of two, got {sim.grid_points}")
    if sim.grid_extent <= 0:
        raise ConfigError("sim.grid_extent", "must be > 0")
    if sim.time_step is not None and sim.time_step <= 0:
        raise ConfigError("sim.time_step", "must be > 0 when given")
    if sim.initial_state not in ("ground", "coherent", "thermal"):
        raise ConfigError("sim.initial_state",
                          f"unknown initial state {sim.initial_state!r}")
    if sim.thermal_samples < 1:
        raise ConfigError("sim.thermal_samples", "must be >= 1")
    if sim.traj_samples < 2:
        raise ConfigError("sim.traj_samples", "must be >= 2")

    geometry = DriveGeometry(theta=(trap.ion_phase(0), trap.ion_phase(1)))
    return ValidatedConfig(
        trap=trap, pulse=pulse, coupling=coupling, sim=sim, geometry=geometry,
        f_s=trap.f_s, eta_s=trap.eta_s, t_gate=pulse.t_total,
        omega_c=trap.omega_c, omega_s=trap.omega_s, omega_nu=pulse.omega_nu)


# ---------------------------------------------------------------------------
# envelope evaluation

@functools.lru_cache(maxsize=256)
def _node_cache(pulse: PulseShape):
    segs = pulse.full_segments()
    tf = pulse.edge_time
    xs = [0.0]
    ys = [0.0]
    t = 0.0
    for dur, amp in segs:
        xs += [t + tf, t + dur]
        ys += [amp, amp]
        t += dur
    xs.append(t + tf)
    ys.append(0.0)
    return np.asarray(xs), np.asarray(ys)


def envelope_nodes(pulse: PulseShape) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints (times, values) of the piecewise-linear envelope."""
    x, y = _node_cache(pulse)
    return x.copy(), y.copy()


def envelope_pieces(pulse: PulseShape) -> list[tuple[float, float, float, float]]:
    """Nonzero-width linear pieces as (t0, t1, amp0, amp1) tuples."""
    x, y = _node_cache(pulse)
    out = []
    for i in range(len(x) - 1):
        if x[i + 1] > x[i]:
            out.append((float(x[i]), float(x[i + 1]), float(y[i]), float(y[i + 1])))
    return out


def envelope(pulse: PulseShape, t) -> np.ndarray | float:
    """Instantaneous normalized amplitude at time(s) t in [0, t_total]."""
    x, y = _node_cache(pulse)
    tg = pulse.t_total
    tt = np.asarray(t, dtype=float)
    slack = 1e-12 * max(tg, 1e-30)
    if np.any(tt < -slack) or np.any(tt > tg + slack):
        raise ValueError(f"envelope time outside [0, {tg}]")
    tt = np.clip(tt, 0.0, tg)
    idx = np.searchsorted(x, tt, side="right") - 1
    idx = np.clip(idx, 0, len(x) - 2)
    width = x[idx + 1] - x[idx]
    frac = np.where(width > 0, (tt - x[idx]) / np.where(width > 0, width, 1.0), 1.0)
    val = y[idx] + (y[idx + 1] - y[idx]) * frac
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(val)
    return val


def pulse_area(pulse: PulseShape) -> float:
    """Integrated drive area in rad: omega_peak times the envelope integral."""
    total = 0.0
    for t0, t1, a0, a1 in envelope_pieces(pulse):
        total += 0.5 * (a0 + a1) * (t1 - t0)
    return pulse.omega_peak * total
