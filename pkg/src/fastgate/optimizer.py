"""Pulse-shape search: seeding, simplex descent, calibration, refinement.

The screening objective runs entirely in the linearized solver, which is
cheap enough for thousands of evaluations; promising shapes are then
re-scored (and nudged) with the grid solver.  Drive strength is never a
search dimension: for any shape the differential phase scales exactly
quadratically with omega_peak once averaged over the uniform phi0 grid,
so the pi/2 constraint pins it in closed form (see calibrate_phase).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import Bounds, minimize

from fastgate.model import (PulseShape, SolverError, ValidatedConfig,
                            pulse_area, validate)
from fastgate.ldsolver import (_bell_from_tables, _branch_tables, _entangling,
                               entangling_phase, ld_gate_error)

TARGET_PHASE = math.pi / 2

# objective value assigned to infeasible / undriven points
BAD_SCORE = 10.0


def _phase_at(pulse: PulseShape, config: ValidatedConfig, omega: float) -> float:
    probe = validate(config.trap, replace(pulse, omega_peak=omega),
                     config.coupling, config.sim)
    return entangling_phase(probe)


def calibrate_phase(pulse: PulseShape, config: ValidatedConfig) -> PulseShape:
    """Rescale omega_peak so the differential phase magnitude is pi/2.

    The scale step is exact in the quadratic model; the Newton step that
    follows guards against any residual from the phase averaging.
    """
    unit = config.omega_c                       # reference drive, rad/s
    theta_unit = _phase_at(pulse, config, unit)
    if abs(theta_unit) < 1e-12:
        raise SolverError("no differential drive")
    omega = unit * math.sqrt(TARGET_PHASE / abs(theta_unit))
    theta = _phase_at(pulse, config, omega)
    # Newton on |theta(omega)| - pi/2 with d|theta|/domega = 2|theta|/omega
    omega -= omega * (abs(theta) - TARGET_PHASE) / (2.0 * abs(theta))
    return replace(pulse, omega_peak=omega)


def calibrated_config(config: ValidatedConfig) -> ValidatedConfig:
    """Validated copy of `config` with the pulse recalibrated to pi/2."""
    pulse = calibrate_phase(config.pulse, config)
    return validate(config.trap, pulse, config.coupling, config.sim)


def full_calibrated_config(config: ValidatedConfig) -> ValidatedConfig:
    """Pin the differential phase to pi/2 as the grid solver measures it.

    Beyond the linear model the drive couples a little less strongly than
    eta says (the wavepacket samples the curvature of the field), so a
    gate calibrated in the linear model comes out short on the grid
    solver, exactly as a power calibration on the apparatus would reveal.
    All geometric phases still scale as omega_peak squared, so one Newton
    step on the measured phase lands the correction.
    """
    from fastgate.fullsolver import full_gate_error

    cal = calibrated_config(config)
    phase = full_gate_error(cal).entangling_phase
    if abs(phase) < 1e-12:
        raise SolverError("no differential drive")
    scale = math.sqrt(TARGET_PHASE / abs(phase))
    pulse = replace(cal.pulse, omega_peak=cal.pulse.omega_peak * scale)
    return validate(config.trap, pulse, config.coupling, config.sim)


# ---------------------------------------------------------------------------
# search space and candidates


@dataclass(frozen=True)
class SearchSpace:
    """Bounds for a symmetric stepped-pulse (or binary) shape search.

    `n_segments` counts the full mirrored sequence (5 or 7 in practice),
    so (n+1)/2 half-sequence entries parameterize it; with `t_gate` fixed
    the centre duration is dependent and only the outer ones are free.
    Binary spaces freeze the amplitudes at the seeded 0/1 pattern and
    optimize switch times only.
    """

    n_segments: int
    nu_bounds: tuple[float, float]
    t_gate: float | None = None
    duration_bounds: tuple[float, float] = (10e-9, 1.5e-6)
    amplitude_bounds: tuple[float, float] = (0.0, 1.0)
    edge_time: float = 5e-9
    binary: bool = False
    epsilon_t: float = 1e-4
    area_weight: float = 1e-6

    def __post_init__(self):
        if self.n_segments < 1 or self.n_segments % 2 == 0:
            raise ValueError("n_segments must be odd (symmetric sequence)")
        for name in ("nu_bounds", "duration_bounds", "amplitude_bounds"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must be a finite ordered pair")
        if self.epsilon_t <= 0:
            raise ValueError("epsilon_t must be > 0")
        if self.edge_time > self.duration_bounds[0]:
            raise ValueError("edge_time exceeds the shortest allowed segment")

    @property
    def n_half(self) -> int:
        return (self.n_segments + 1) // 2


@dataclass(frozen=True)
class Candidate:
    """A scored pulse shape; scores travel with the config that made them."""

    pulse: PulseShape
    ld_error: float
    pulse_area: float
    config_hash: str
    full_error: float | None = None
    sensitivity_score: float | None = None
    converged: bool = True
    refine_partial: bool = False

    def to_dict(self) -> dict:
        return {
            "segments": [list(s) for s in self.pulse.segments],
            "symmetric": self.pulse.symmetric,
            "edge_time": self.pulse.edge_time,
            "omega_peak": self.pulse.omega_peak,
            "nu": self.pulse.nu,
            "ld_error": self.ld_error,
            "pulse_area": self.pulse_area,
            "config_hash": self.config_hash,
            "full_error": self.full_error,
            "sensitivity_score": self.sensitivity_score,
            "converged": self.converged,
            "refine_partial": self.refine_partial,
        }


def candidate_from_dict(d: dict) -> Candidate:
    pulse = PulseShape(segments=tuple((float(t), float(a))
                                      for t, a in d["segments"]),
                       symmetric=bool(d["symmetric"]),
                       edge_time=float(d["edge_time"]),
                       omega_peak=float(d["omega_peak"]),
                       nu=float(d["nu"]))
    return Candidate(pulse=pulse, ld_error=float(d["ld_error"]),
                     pulse_area=float(d["pulse_area"]),
                     config_hash=str(d["config_hash"]),
                     full_error=d.get("full_error"),
                     sensitivity_score=d.get("sensitivity_score"),
                     converged=bool(d.get("converged", True)),
                     refine_partial=bool(d.get("refine_partial", False)))


# ---------------------------------------------------------------------------
# fast screening score

def _center_duration(space: SearchSpace, outer) -> float:
    """Dependent centre-segment width when the gate time is pinned."""
    return space.t_gate - space.edge_time - 2.0 * float(np.sum(outer))


def _assemble_pulse(space: SearchSpace, durations, amps, nu) -> PulseShape:
    segs = tuple((float(d), float(a)) for d, a in zip(durations, amps))
    return PulseShape(segments=segs, symmetric=True,
                      edge_time=space.edge_time, omega_peak=1.0,
                      nu=float(nu))


def _screen(config: ValidatedConfig, pulse: PulseShape):
    """(ld_error, area, omega_cal) at the pi/2 point, one table build.

    The phase tables split into a light-shift part linear in omega_peak
    and a geometric part quadratic in it, so the calibrated score follows
    exactly from tables built at a reference drive.
    """
    unit = config.omega_c
    probe = validate(config.trap, replace(pulse, omega_peak=unit),
                     config.coupling, config.sim)
    phi0, light, geo, alphas = _branch_tables(probe, split=True)
    theta_unit = float(np.mean(_entangling(geo)))
    if abs(theta_unit) < 1e-12:
        return math.inf, math.inf, 0.0
    s = math.sqrt(TARGET_PHASE / abs(theta_unit))
    bell = _bell_from_tables(probe, light * s + geo * (s * s), alphas * s)
    area = pulse_area(replace(pulse, omega_peak=unit * s))
    return bell, area, unit * s


def seed_candidates(space: SearchSpace, config: ValidatedConfig,
                    count: int, rng_seed: int = 0) -> list[Candidate]:
    """Uniform random shapes within bounds, scored in the linear model.

    Deterministic for a fixed seed.  Amplitudes are normalized to peak 1
    (binary spaces draw 0/1 patterns with at least one 1).  With a pinned
    gate time, draws whose dependent centre segment falls outside bounds
    are rejected and redrawn.
    """
    rng = np.random.default_rng(rng_seed)
    h = space.n_half
    dlo, dhi = space.duration_bounds
    alo, ahi = space.amplitude_bounds
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 200 * max(count, 1):
            raise SolverError("search space too tight: seeding keeps "
                              "violating the duration bounds")
        if space.t_gate is None:
            durations = rng.uniform(dlo, dhi, h)
        else:
            outer = rng.uniform(dlo, dhi, h - 1)
            center = _center_duration(space, outer)
            if not dlo <= center <= dhi:
                continue
            durations = np.append(outer, center)
        if space.binary:
            amps = rng.integers(0, 2, h).astype(float)
            if amps.max() == 0.0:
                amps[int(rng.integers(0, h))] = 1.0
        else:
            amps = rng.uniform(alo, ahi, h)
            amps = amps / amps.max() if amps.max() > 0 else np.ones(h)
        nu = rng.uniform(*space.nu_bounds)
        pulse = _assemble_pulse(space, durations, amps, nu)
        bell, area, omega = _screen(config, pulse)
        scored = replace(pulse, omega_peak=omega if omega > 0 else 1.0)
        cfg = validate(config.trap, scored, config.coupling, config.sim)
        out.append(Candidate(pulse=scored, ld_error=bell, pulse_area=area,
                             config_hash=cfg.content_hash()))
    return out


# ---------------------------------------------------------------------------
# local simplex descent in the linear model


def _pack(space: SearchSpace, pulse: PulseShape, f_c: float):
    """Pulse -> normalized coordinate vector and bounds."""
    h = space.n_half
    durs = np.array([d for d, _ in pulse.segments])
    amps = np.array([a for _, a in pulse.segments])
    dlo, dhi = space.duration_bounds
    x, lo, hi = [], [], []
    n_free = h - 1 if space.t_gate is not None else h
    for d in durs[:n_free]:
        x.append(d / dhi)
        lo.append(dlo / dhi)
        hi.append(1.0)
    if not space.binary:
        alo, ahi = space.amplitude_bounds
        x.extend(amps)
        lo.extend([alo] * h)
        hi.extend([ahi] * h)
    x.append(pulse.nu / f_c)
    lo.append(space.nu_bounds[0] / f_c)
    hi.append(space.nu_bounds[1] / f_c)
    return np.array(x), Bounds(np.array(lo), np.array(hi))


def _unpack(space: SearchSpace, x, f_c: float, ref_amps):
    """Coordinate vector -> (durations, amps, nu); None if infeasible."""
    h = space.n_half
    dhi = space.duration_bounds[1]
    n_free = h - 1 if space.t_gate is not None else h
    durations = np.asarray(x[:n_free]) * dhi
    if space.t_gate is not None:
        center = _center_duration(space, durations)
        durations = np.append(durations, center)
        dlo = max(space.duration_bounds[0], space.edge_time)
        if not dlo <= center <= space.duration_bounds[1]:
            return None
    if space.binary:
        amps = np.asarray(ref_amps, dtype=float)
    else:
        amps = np.asarray(x[n_free:n_free + h], dtype=float)
        if amps.max() <= 0:
            return None
        amps = amps / amps.max()
    nu = float(x[-1]) * f_c
    return durations, amps, nu


def local_optimize(candidate: Candidate, config: ValidatedConfig,
                   space: SearchSpace, max_evals: int = 2000,
                   restarts: int = 3) -> Candidate:
    """Nelder-Mead descent of ld_error + area penalty at fixed pi/2 phase.

    Bound-projected simplex over (outer durations, amplitudes, nu); the
    drive strength is re-pinned analytically at every evaluation, never a
    simplex dimension.  Converges when the simplex collapses below 1e-6
    in the normalized coordinates; otherwise returns the best point seen,
    flagged unconverged.  Restarts shrink the simplex around the incumbent
    to climb out of shallow local minima.
    """
    f_c = config.trap.f_c
    ref_amps = [a for _, a in candidate.pulse.segments]
    area_ref = candidate.pulse_area if math.isfinite(candidate.pulse_area) \
        and candidate.pulse_area > 0 else 1.0
    evals = 0

    def objective(x):
        nonlocal evals
        evals += 1
        parts = _unpack(space, x, f_c, ref_amps)
        if parts is None:
            return BAD_SCORE
        durations, amps, nu = parts
        pulse = _assemble_pulse(space, durations, amps, nu)
        try:
            bell, area, _ = _screen(config, pulse)
        except (SolverError, ValueError):
            return BAD_SCORE
        if not math.isfinite(bell):
            return BAD_SCORE
        return bell + space.area_weight * (area / area_ref)

    x0, bounds = _pack(space, candidate.pulse, f_c)
    best_x, best_f = x0, objective(x0)
    converged = False
    step = 0.05
    for _ in range(max(restarts, 1)):
        if evals >= max_evals:
            break
        simplex = np.vstack([best_x] + [
            best_x + step * np.eye(len(best_x))[i]
            for i in range(len(best_x))])
        simplex = np.clip(simplex, bounds.lb, bounds.ub)
        res = minimize(objective, best_x, method="Nelder-Mead", bounds=bounds,
                       options={"maxfev": max_evals - evals,
                                "initial_simplex": simplex,
                                "xatol": 1e-6, "fatol": 1e-12})
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
        converged = bool(res.success)
        step *= 0.1                      # shrunken restart simplex
    parts = _unpack(space, best_x, f_c, ref_amps)
    if parts is None:                    # should not happen; keep the seed
        return replace(candidate, converged=False)
    durations, amps, nu = parts
    pulse = _assemble_pulse(space, durations, amps, nu)
    # final scoring through the public calibration path
    try:
        cal = calibrate_phase(pulse, config)
    except SolverError:
        return replace(candidate, converged=False)
    cfg = validate(config.trap, cal, config.coupling, config.sim)
    ld = ld_gate_error(cfg)
    return Candidate(pulse=cal, ld_error=ld.bell_error,
                     pulse_area=ld.pulse_area,
                     config_hash=cfg.content_hash(), converged=converged)


# ---------------------------------------------------------------------------
# full-solver refinement


def _golden_min(fun, lo: float, hi: float, iters: int):
    """Plain golden-section minimum of fun on [lo, hi]."""
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    x1, x2 = b - gr * (b - a), a + gr * (b - a)
    f1, f2 = fun(x1), fun(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - gr * (b - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + gr * (b - a)
            f2 = fun(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def refine_full(candidates: list[Candidate], config: ValidatedConfig,
                space: SearchSpace | None = None,
                budget: int = 200) -> list[Candidate]:
    """Score screened candidates with the grid solver; polish the best.

    Only candidates that passed the linear-model screen (ld_error below
    the space's epsilon_t) are refined.  The best one gets a coordinate
    descent: beat frequency first, then a drive-strength trim around the
    pi/2 calibration, then a short simplex over everything, all under the
    shared evaluation budget.  Runs that exhaust the budget come back
    flagged refine_partial.
    """
    from fastgate.fullsolver import full_gate_error

    if not candidates:
        return []
    eps = space.epsilon_t if space is not None else 1e-4
    screened = [c for c in candidates if c.ld_error < eps]
    if not screened:
        return []
    evals = 0

    def full_bell(pulse: PulseShape, mult: float = 1.0) -> float:
        nonlocal evals
        evals += 1
        try:
            cal = calibrate_phase(pulse, config)
            cal = replace(cal, omega_peak=cal.omega_peak * mult)
            cfg = validate(config.trap, cal, config.coupling, config.sim)
            return full_gate_error(cfg).bell_error
        except SolverError:
            return BAD_SCORE

    scored = []
    partial = False
    for cand in screened:
        if evals >= budget:
            partial = True
            scored.append(cand)
            continue
        scored.append(replace(cand, full_error=full_bell(cand.pulse)))

    order = sorted(range(len(scored)),
                   key=lambda i: (scored[i].full_error
                                  if scored[i].full_error is not None
                                  else math.inf,
                                  scored[i].pulse_area,
                                  scored[i].config_hash))
    best = scored[order[0]]
    if best.full_error is None or best.full_error >= BAD_SCORE:
        return [replace(c, refine_partial=partial or c.full_error is None)
                for c in scored]

    pulse, err = best.pulse, best.full_error
    t_g = pulse.t_total
    half_tooth = 0.25 / t_g              # loop-closure comb spacing is 1/t_g

    # 1. beat frequency
    if evals + 8 <= budget:
        nu, e = _golden_min(
            lambda v: full_bell(replace(pulse, nu=v)),
            pulse.nu - half_tooth, pulse.nu + half_tooth, 6)
        if e < err:
            pulse, err = replace(pulse, nu=nu), e
    else:
        partial = True
    # 2. drive trim (corrects the entangling phase for out-of-LD terms)
    if evals + 8 <= budget:
        mult, e = _golden_min(lambda m: full_bell(pulse, m),
                              0.97, 1.03, 6)
        if e < err:
            cal = calibrate_phase(pulse, config)
            pulse = replace(cal, omega_peak=cal.omega_peak * mult)
            err = e
    else:
        partial = True
    # 3. everything at once, small simplex
    if space is not None and evals < budget:
        f_c = config.trap.f_c
        ref_amps = [a for _, a in pulse.segments]
        x0, bounds = _pack(space, pulse, f_c)

        def objective(x):
            parts = _unpack(space, x, f_c, ref_amps)
            if parts is None:
                return BAD_SCORE
            durations, amps, nu = parts
            return full_bell(_assemble_pulse(space, durations, amps, nu))

        res = minimize(objective, x0, method="Nelder-Mead", bounds=bounds,
                       options={"maxfev": max(budget - evals, 1),
                                "xatol": 1e-5, "fatol": 1e-12})
        if res.fun < err:
            durations, amps, nu = _unpack(space, res.x, f_c, ref_amps)
            pulse = calibrate_phase(
                _assemble_pulse(space, durations, amps, nu), config)
            err = float(res.fun)
        if not res.success:
            partial = True

    cfg = validate(config.trap, pulse, config.coupling, config.sim)
    ld = ld_gate_error(cfg)
    refined_best = Candidate(
        pulse=pulse, ld_error=ld.bell_error, pulse_area=ld.pulse_area,
        config_hash=cfg.content_hash(), full_error=err,
        converged=best.converged, refine_partial=partial)
    out = [refined_best] + [scored[i] for i in order[1:]]
    return [replace(c, refine_partial=c.refine_partial or partial)
            if c is not refined_best else c for c in out]


# ---------------------------------------------------------------------------
# robustness and selection


def sensitivity(candidate: Candidate, config: ValidatedConfig,
                sigma_t: float = 0.2e-9, sigma_a: float = 0.002,
                draws: int = 100, rng_seed: int = 0) -> float:
    """Mean error increase under timing and relative-amplitude jitter.

    Every physical segment of the mirrored sequence is perturbed
    independently (N(0, sigma_t) on durations, N(0, sigma_a) relative on
    amplitudes), the drive staying at its nominal calibration.  Scored in
    the linear model; deterministic for a fixed seed.
    """
    rng = np.random.default_rng(rng_seed)
    segs = candidate.pulse.full_segments()
    base_pulse = replace(candidate.pulse, segments=segs, symmetric=False)
    base_cfg = validate(config.trap, base_pulse, config.coupling, config.sim)
    base = ld_gate_error(base_cfg).bell_error
    durs = np.array([d for d, _ in segs])
    amps = np.array([a for _, a in segs])
    total = 0.0
    for _ in range(draws):
        d = durs + rng.normal(0.0, sigma_t, durs.shape) if sigma_t > 0 \
            else durs
        a = amps * (1.0 + rng.normal(0.0, sigma_a, amps.shape)) \
            if sigma_a > 0 else amps
        d = np.maximum(d, candidate.pulse.edge_time)
        a = np.clip(a, 0.0, None)
        peak = a.max()
        if peak <= 0:
            total += 0.5 - base
            continue
        pulse = replace(base_pulse, segments=tuple(zip(d, a / peak)),
                        omega_peak=base_pulse.omega_peak * peak)
        cfg = validate(config.trap, pulse, config.coupling, config.sim)
        total += ld_gate_error(cfg).bell_error - base
    return total / draws


def pareto_select(candidates: list[Candidate]) -> list[Candidate]:
    """Non-dominated set over (full_error, pulse_area, sensitivity).

    Missing scores sort as +inf.  Exact ties on all three objectives keep
    the lexicographically smallest config hash; the result is ordered by
    (error, area, hash), so selection is fully deterministic.
    """
    def key(c: Candidate):
        return (c.full_error if c.full_error is not None else math.inf,
                c.pulse_area,
                c.sensitivity_score if c.sensitivity_score is not None
                else math.inf)

    chosen: list[Candidate] = []
    for c in candidates:
        kc = key(c)
        dominated = False
        for d in candidates:
            if d is c:
                continue
            kd = key(d)
            if all(x <= y for x, y in zip(kd, kc)) and kd != kc:
                dominated = True
                break
            if kd == kc and d.config_hash < c.config_hash:
                dominated = True               # duplicate: smaller hash wins
                break
        if not dominated:
            chosen.append(c)
    seen = set()
    unique = []
    for c in sorted(chosen, key=lambda c: (key(c)[0], key(c)[1],
                                           c.config_hash)):
        if c.config_hash not in seen:
            seen.add(c.config_hash)
            unique.append(c)
    return unique
