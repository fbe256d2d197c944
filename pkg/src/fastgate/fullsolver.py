"""Grid propagation of the two-mode wavepacket under the full optical field.

The state lives on a 2D position grid (com axis x stretch axis, both in
ground-state widths).  Each time step sandwiches a midpoint potential kick
between exact harmonic rotations, so the only approximations are the
Strang splitting in time and the finite grid in space:

    U(dt) ~ R(dt/2) . exp(-i dt V(t_mid)) . R(dt/2)

The harmonic rotation R is evaluated exactly (including zero-point phase)
by a chirp-FFT-chirp decomposition: a rotation by angle w*dt in phase
space equals quadratic position phases around a quadratic momentum phase,

    R(th) = exp(-i tan(th/2) q^2 / 2) F' exp(-i sin(th) k^2 / 2) F
            exp(-i tan(th/2) q^2 / 2)

which is unitary on the grid and has no step-size error of its own.
Successive half rotations merge, so each step costs one kick and one FFT
pair.  All branch/phi0 propagations are stacked into one array; with the
default couplings only two branches are propagated and the other two are
recovered from the half-turn symmetry of the beat phase.

Everything is deterministic: reductions run in fixed index order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import fft2, ifft2

from fastgate.fidelity import mean_bell_error
from fastgate.ldsolver import propagate_ld
from fastgate.model import (BRANCHES, SolverError, ValidatedConfig,
                            envelope_pieces, pulse_area, validate)

ROOT2 = math.sqrt(2.0)

# audit thresholds
LEAK_ABORT = 1e-6          # edge-band probability that aborts a run
NORM_TOL = 1e-9            # allowed norm drift per 1e4 steps
STEP_PHASE_LIMIT = 0.1     # rad, hard cap for harmonic/potential phase per step
STEP_PHASE_TARGET = 0.02   # rad, default step sizing (dt-halving moves the
                           # error well under 1e-6 at this target)


class GridError(SolverError):
    """The spatial grid cannot faithfully hold the propagated state."""


@dataclass(frozen=True)
class MotionalGrid:
    """Position/momentum grids, one axis per normal mode."""
    n_c: int
    n_s: int
    extent_c: float        # half-width, ground-state units
    extent_s: float

    def axis(self, mode: int) -> np.ndarray:
        n = (self.n_c, self.n_s)[mode]
        x = (self.extent_c, self.extent_s)[mode]
        dq = 2.0 * x / n
        return (np.arange(n) - n // 2) * dq

    def wavenumbers(self, mode: int) -> np.ndarray:
        n = (self.n_c, self.n_s)[mode]
        x = (self.extent_c, self.extent_s)[mode]
        return 2.0 * np.pi * np.fft.fftfreq(n, d=2.0 * x / n)

    @property
    def cell_area(self) -> float:
        return (2.0 * self.extent_c / self.n_c) * (2.0 * self.extent_s / self.n_s)


@dataclass
class BranchWave:
    """One branch/phi0 wavepacket with its norm audit trail."""
    psi: np.ndarray
    branch: str
    phi0: float
    norm_history: np.ndarray = field(default_factory=lambda: np.ones(1))


@dataclass
class FullGateResult:
    bell_error: float
    analysis_phase: float
    entangling_phase: float
    bell_errors_by_sample: np.ndarray
    max_displacement: float        # ground-state widths, sampled at audits
    squeezing_ratio: float         # worst final variance / ground variance
    boundary_leakage: float
    norm_drift: float
    n_steps: int
    grid: MotionalGrid
    pulse_area: float
    final_states: list[BranchWave] | None = None

    def to_dict(self) -> dict:
        return {
            "bell_error": self.bell_error,
            "analysis_phase": self.analysis_phase,
            "entangling_phase": self.entangling_phase,
            "max_displacement": self.max_displacement,
            "squeezing_ratio": self.squeezing_ratio,
            "boundary_leakage": self.boundary_leakage,
            "norm_drift": self.norm_drift,
            "n_steps": self.n_steps,
            "grid": {"n_c": self.grid.n_c, "n_s": self.grid.n_s,
                     "extent_c": self.grid.extent_c,
                     "extent_s": self.grid.extent_s},
            "pulse_area": self.pulse_area,
        }


def _ld_excursion(config: ValidatedConfig) -> float:
    """Largest |alpha| the linear model predicts, for grid pre-sizing."""
    peak = 0.0
    for branch in ("dd", "du"):
        for phi0 in (0.0, 0.5 * np.pi):
            tr = propagate_ld(config, branch, phi0, n_samples=512)
            peak = max(peak, float(np.max(np.abs(tr.alpha_c))),
                       float(np.max(np.abs(tr.alpha_s))))
    return peak


def build_grid(config: ValidatedConfig,
               max_alpha: float | None = None) -> MotionalGrid:
    """Size the grid from the configured extent and the LD excursion.

    The wavepacket center wanders up to sqrt(2)*|alpha| ground-state
    widths from the origin, and the same reach is needed in momentum
    (phase-space rotation maps one onto the other), so both the position
    extent and the Nyquist wavenumber must clear it with headroom.
    """
    n = config.sim.grid_points
    if max_alpha is None:
        max_alpha = _ld_excursion(config)
    needed = 1.2 * ROOT2 * max_alpha + 7.0
    extent = max(config.sim.grid_extent, needed)
    k_max = np.pi * n / (2.0 * extent)
    if k_max < needed:
        raise GridError(
            f"grid too small: {n} points over +/-{extent:.1f} widths leaves "
            f"momentum reach {k_max:.1f} < required {needed:.1f}; "
            "increase grid_points")
    return MotionalGrid(n_c=n, n_s=n, extent_c=extent, extent_s=extent)


def _branch_fields(config: ValidatedConfig, grid: MotionalGrid,
                   branch: str) -> tuple[np.ndarray, np.ndarray]:
    """Static potential quadratures C, S with the beat phase factored out.

    V(q, t) = Omega(t) * [C cos(beta) + S sin(beta)], beta = w_nu t + phi0.
    """
    idx = BRANCHES.index(branch)
    lam = config.coupling.branch_pairs()[idx]
    theta = config.geometry.theta
    b = config.geometry.b
    qc = grid.axis(0)[:, None]
    qs = grid.axis(1)[None, :]
    cfield = np.zeros((grid.n_c, grid.n_s))
    sfield = np.zeros((grid.n_c, grid.n_s))
    for j in (0, 1):
        x = theta[j] + ROOT2 * (config.trap.eta_c * b[j][0] * qc
                                + config.eta_s * b[j][1] * qs)
        cfield += lam[j] * np.cos(x)
        sfield += lam[j] * np.sin(x)
    return cfield, sfield


def build_potential(config: ValidatedConfig, branch: str, t: float,
                    phi0: float, grid: MotionalGrid | None = None) -> np.ndarray:
    """Optical potential field (angular frequency units) at time t."""
    from fastgate.model import envelope
    if grid is None:
        grid = build_grid(config)
    cfield, sfield = _branch_fields(config, grid, branch)
    beta = config.omega_nu * t + phi0
    om = config.pulse.omega_peak * envelope(config.pulse, t)
    return om * (math.cos(beta) * cfield + math.sin(beta) * sfield)


def _pick_time_step(config: ValidatedConfig) -> float:
    """Largest step keeping harmonic and potential phases under target."""
    v_max = 2.0 * config.pulse.omega_peak       # |C|,|S| <= 2 for two ions
    rate = max(config.omega_s, v_max, 1.0)
    dt = STEP_PHASE_TARGET / rate
    if config.sim.time_step is not None:
        dt = config.sim.time_step
        if dt * max(config.omega_s, v_max) > STEP_PHASE_LIMIT:
            raise SolverError(
                f"time_step {dt:g}s fails the step-size audit: "
                f"harmonic phase {dt * config.omega_s:.3f} rad or potential "
                f"phase {dt * v_max:.3f} rad exceeds {STEP_PHASE_LIMIT} rad")
    return dt


def _rotation_shears(grid: MotionalGrid, config: ValidatedConfig,
                     dt: float, half: bool):
    """(position chirp, momentum chirp) for an exact harmonic rotation."""
    scale = 0.5 if half else 1.0
    th_c = config.omega_c * dt * scale
    th_s = config.omega_s * dt * scale
    qc2 = grid.axis(0)[:, None] ** 2
    qs2 = grid.axis(1)[None, :] ** 2
    kc2 = grid.wavenumbers(0)[:, None] ** 2
    ks2 = grid.wavenumbers(1)[None, :] ** 2
    qshear = np.exp(-0.5j * (math.tan(th_c / 2.0) * qc2
                             + math.tan(th_s / 2.0) * qs2))
    kshear = np.exp(-0.5j * (math.sin(th_c) * kc2 + math.sin(th_s) * ks2))
    return qshear, kshear


def _rotate(psis: np.ndarray, shears) -> np.ndarray:
    qshear, kshear = shears
    out = fft2(qshear * psis, norm="ortho", axes=(-2, -1))
    out = ifft2(kshear * out, norm="ortho", axes=(-2, -1))
    out *= qshear
    return out


class _Audit:
    """Running unitarity/containment checks over a stacked propagation."""

    def __init__(self, grid: MotionalGrid, edge_cells: int = 3):
        n_c, n_s = grid.n_c, grid.n_s
        mask = np.zeros((n_c, n_s), dtype=bool)
        mask[:edge_cells, :] = mask[-edge_cells:, :] = True
        mask[:, :edge_cells] = mask[:, -edge_cells:] = True
        self._edge = mask
        self._qc = grid.axis(0)[:, None]
        self._qs = grid.axis(1)[None, :]
        self.max_leak = 0.0
        self.max_norm_err = 0.0
        self.max_disp = 0.0

    def check(self, psis: np.ndarray) -> None:
        prob = np.abs(psis) ** 2
        norms = np.sum(prob, axis=(-2, -1))
        self.max_norm_err = max(self.max_norm_err,
                                float(np.max(np.abs(norms - 1.0))))
        leak = float(np.max(np.sum(prob[..., self._edge], axis=-1)))
        self.max_leak = max(self.max_leak, leak)
        if leak > LEAK_ABORT:
            raise GridError(
                f"grid too small: boundary leakage {leak:.2e} exceeds "
                f"{LEAK_ABORT:g}")
        mean_c = np.sum(prob * self._qc, axis=(-2, -1))
        mean_s = np.sum(prob * self._qs, axis=(-2, -1))
        self.max_disp = max(self.max_disp,
                            float(np.max(np.abs(mean_c))),
                            float(np.max(np.abs(mean_s))))


def _propagate_stack(config: ValidatedConfig, grid: MotionalGrid,
                     psis: np.ndarray, branches: list[str],
                     phi0s: np.ndarray, audit_every: int = 64,
                     phi_pert=None):
    """Advance a (B, N_c, N_s) stack through the whole pulse.

    branches/phi0s label the stack entries.  Returns the final stack plus
    the audit record; norm accumulates into per-state histories.
    phi_pert, if given, maps time to an extra beat-note phase in radians
    (drive-chain chirp injection for robustness studies).
    """
    dt_target = _pick_time_step(config)
    uniq = sorted(set(branches))
    fields = {b: _branch_fields(config, grid, b) for b in uniq}
    cstack = np.stack([fields[b][0] for b in branches])
    sstack = np.stack([fields[b][1] for b in branches])
    phi0s = np.asarray(phi0s, dtype=float)

    audit = _Audit(grid)
    audit.check(psis)
    norm_rows = [np.sum(np.abs(psis) ** 2, axis=(-2, -1))]

    wpk = config.pulse.omega_peak
    wnu = config.omega_nu
    n_steps = 0
    for (t0, t1, a0, a1) in envelope_pieces(config.pulse):
        width = t1 - t0
        n = max(1, math.ceil(width / dt_target))
        dt = width / n
        half = _rotation_shears(grid, config, dt, half=True)
        full = _rotation_shears(grid, config, dt, half=False)
        slope = (a1 - a0) / width
        psis = _rotate(psis, half)
        for k in range(n):
            t_mid = t0 + (k + 0.5) * dt
            om = wpk * (a0 + slope * (t_mid - t0))
            beta = wnu * t_mid + phi0s
            if phi_pert is not None:
                beta = beta + phi_pert(t_mid)
            phase = (om * dt) * (np.cos(beta)[:, None, None] * cstack
                                 + np.sin(beta)[:, None, None] * sstack)
            psis = psis * np.exp(-1j * phase)
            psis = _rotate(psis, full if k < n - 1 else half)
            n_steps += 1
            if k % audit_every == audit_every - 1:
                audit.check(psis)
        audit.check(psis)
        norm_rows.append(np.sum(np.abs(psis) ** 2, axis=(-2, -1)))
    return psis, audit, np.array(norm_rows), n_steps


def _ground_state(grid: MotionalGrid) -> np.ndarray:
    qc = grid.axis(0)[:, None]
    qs = grid.axis(1)[None, :]
    psi = np.exp(-0.5 * (qc ** 2 + qs ** 2)).astype(complex)
    return psi / math.sqrt(np.sum(np.abs(psi) ** 2))


def _coherent_state(grid: MotionalGrid, beta_c: complex,
                    beta_s: complex) -> np.ndarray:
    # center sqrt(2) Re(beta), momentum sqrt(2) Im(beta) per axis
    qc = grid.axis(0)[:, None]
    qs = grid.axis(1)[None, :]
    psi = np.exp(-0.5 * (qc - ROOT2 * beta_c.real) ** 2
                 + 1j * ROOT2 * beta_c.imag * qc
                 - 0.5 * (qs - ROOT2 * beta_s.real) ** 2
                 + 1j * ROOT2 * beta_s.imag * qs)
    return psi / math.sqrt(np.sum(np.abs(psi) ** 2))


def initial_wave(config: ValidatedConfig, grid: MotionalGrid,
                 branch: str = "dd", phi0: float = 0.0) -> BranchWave:
    if config.sim.initial_state == "coherent":
        psi = _coherent_state(grid, config.sim.alpha_c, config.sim.alpha_s)
    else:
        psi = _ground_state(grid)
    return BranchWave(psi=psi, branch=branch, phi0=phi0)


def propagate_full(config: ValidatedConfig, branch: str, phi0: float,
                   initial: BranchWave | None = None,
                   grid: MotionalGrid | None = None,
                   phi_pert=None) -> BranchWave:
    """Single branch/phi0 propagation through the whole pulse.

    phi_pert optionally injects extra beat-note phase (callable of time,
    radians) to model drive-chain phase chirp.
    """
    if grid is None:
        grid = build_grid(config)
    if initial is None:
        initial = initial_wave(config, grid, branch, phi0)
    stack = initial.psi[None, :, :].astype(complex)
    out, audit, norms, _ = _propagate_stack(config, grid, stack,
                                            [branch], np.array([phi0]),
                                            phi_pert=phi_pert)
    return BranchWave(psi=out[0], branch=branch, phi0=phi0,
                      norm_history=norms[:, 0])


def _thermal_draws(config: ValidatedConfig, rng: np.random.Generator):
    """Initial coherent-state samples for the configured start."""
    sim = config.sim
    if sim.initial_state == "coherent":
        return [(complex(sim.alpha_c), complex(sim.alpha_s))]
    nb_c, nb_s = config.trap.nbar_c, config.trap.nbar_s
    if nb_c == 0.0 and nb_s == 0.0:
        return [(0j, 0j)]
    draws = []
    for _ in range(sim.thermal_samples):
        re_c, im_c = rng.normal(0.0, math.sqrt(nb_c / 2.0), 2) \
            if nb_c > 0 else (0.0, 0.0)
        re_s, im_s = rng.normal(0.0, math.sqrt(nb_s / 2.0), 2) \
            if nb_s > 0 else (0.0, 0.0)
        draws.append((re_c + 1j * im_c, re_s + 1j * im_s))
    return draws


def full_gate_error(config: ValidatedConfig,
                    include_states: bool = False) -> FullGateResult:
    """phi0-averaged Bell error from the grid solver.

    With the default opposite-sign couplings only the dd and du branches
    are propagated: advancing the beat phase by half a turn flips the sign
    of the potential, which maps dd onto uu and du onto ud exactly.  The
    mapping needs an even phi0 grid; odd grids propagate all four.
    """
    n_phi = config.sim.phi0_grid_size
    phi0 = 2.0 * np.pi * np.arange(n_phi) / n_phi
    grid = build_grid(config)

    pairs = config.coupling.branch_pairs()
    mirrored = (pairs[0] == tuple(-x for x in pairs[3])
                and pairs[1] == tuple(-x for x in pairs[2])
                and n_phi % 2 == 0)
    prop_branches = ["dd", "du"] if mirrored else list(BRANCHES)

    branches = [b for b in prop_branches for _ in range(n_phi)]
    phi0s = np.concatenate([phi0] * len(prop_branches))

    rng = np.random.default_rng(config.sim.rng_seed)
    draws = _thermal_draws(config, rng)
    kernels = np.zeros((len(draws), n_phi, 4, 4), dtype=complex)
    audit_max = {"leak": 0.0, "norm": 0.0, "disp": 0.0}
    n_steps = 0
    squeeze = 1.0
    final_states: list[BranchWave] = []

    qc = grid.axis(0)[:, None]
    qs = grid.axis(1)[None, :]
    for si, (bc, bs) in enumerate(draws):
        psi0 = _coherent_state(grid, bc, bs)
        stack = np.broadcast_to(psi0, (len(branches),) + psi0.shape).copy()
        out, audit, _, n_steps = _propagate_stack(config, grid, stack,
                                                  branches, phi0s)
        if mirrored:
            # uu(phi0) = dd(phi0 + pi), ud(phi0) = du(phi0 + pi)
            shift = np.roll(np.arange(n_phi), -(n_phi // 2))
            per = {"dd": out[:n_phi], "du": out[n_phi:],
                   "ud": out[n_phi:][shift], "uu": out[:n_phi][shift]}
        else:
            per = {b: out[i * n_phi:(i + 1) * n_phi]
                   for i, b in enumerate(BRANCHES)}
        states = np.stack([per[b] for b in BRANCHES], axis=1)  # (P,4,N,N)
        flat = states.reshape(n_phi, 4, -1)
        kernels[si] = np.einsum("psx,pqx->psq", flat, np.conj(flat))

        audit_max["leak"] = max(audit_max["leak"], audit.max_leak)
        audit_max["norm"] = max(audit_max["norm"], audit.max_norm_err)
        audit_max["disp"] = max(audit_max["disp"], audit.max_disp)
        prob = np.abs(out) ** 2
        for ax, coord in ((0, qc), (1, qs)):
            mu = np.sum(prob * coord, axis=(-2, -1))
            var = np.sum(prob * coord ** 2, axis=(-2, -1)) - mu ** 2
            squeeze = max(squeeze, float(np.max(var / 0.5)))
        if include_states and si == 0:
            for i, b in enumerate(branches):
                final_states.append(BranchWave(psi=out[i], branch=b,
                                               phi0=float(phi0s[i])))

    mean_kernel = np.mean(kernels, axis=0)
    bell_err, analysis = mean_bell_error(mean_kernel)
    per_sample = np.array([mean_bell_error(k)[0] for k in kernels])

    # differential phase estimate from the kernel's off-diagonal phases
    ent = 0.5 * np.angle(mean_kernel[:, 1, 0] * mean_kernel[:, 2, 0]
                         / np.where(np.abs(mean_kernel[:, 3, 0]) > 1e-30,
                                    mean_kernel[:, 3, 0], 1.0))
    return FullGateResult(
        bell_error=float(bell_err),
        analysis_phase=float(analysis),
        entangling_phase=float(np.angle(np.mean(np.exp(1j * ent)))),
        bell_errors_by_sample=per_sample,
        max_displacement=audit_max["disp"],
        squeezing_ratio=squeeze,
        boundary_leakage=audit_max["leak"],
        norm_drift=audit_max["norm"],
        n_steps=n_steps,
        grid=grid,
        pulse_area=pulse_area(config.pulse),
        final_states=final_states if include_states else None)


def error_vs_time_curve(config: ValidatedConfig, gate_times,
                        nu_points: int | None = None, top_k: int = 3,
                        refine_iters: int = 5):
    """Best rectangular-pulse error at each requested gate duration.

    For every duration: scan the beat frequency on a grid spanning both
    sides of the stretch mode, score each point cheaply in the linear
    model, then evaluate the few best with the grid solver and polish the
    winner by golden-section on nu (drive recalibrated every step).

    The error dips where a mode's phase-space loop closes, which happens
    on a comb with spacing 1/t_g in nu; by default the cheap screen is
    densified with gate time so no comb tooth is skipped.
    """
    from fastgate.ldsolver import ld_gate_error
    from fastgate.optimizer import calibrated_config

    f_c = config.trap.f_c
    f_s = config.trap.f_s
    rows = []
    for t_g in gate_times:
        if nu_points is None:
            n_nu = max(24, int(math.ceil(3.0 * t_g * (3.8 - 1.02) * f_c)))
        else:
            n_nu = nu_points
        def rect_config(nu):
            pulse = replace(config.pulse, segments=((float(t_g), 1.0),),
                            symmetric=True, edge_time=0.0, nu=float(nu))
            return validate(config.trap, pulse, config.coupling, config.sim)

        def full_err(nu):
            try:
                cal = calibrated_config(rect_config(nu))
                return full_gate_error(cal).bell_error
            except SolverError:
                return 1.0

        nus = np.concatenate([
            np.linspace(1.02 * f_c, 0.98 * f_s, n_nu // 2),
            np.linspace(1.02 * f_s, 3.8 * f_c, n_nu - n_nu // 2)])
        ld_scores = []
        for nu in nus:
            try:
                cal = calibrated_config(rect_config(nu))
                ld_scores.append(ld_gate_error(cal).bell_error)
            except SolverError:
                ld_scores.append(1.0)
        order = np.argsort(ld_scores)[:top_k]
        evals = {float(nus[i]): full_err(nus[i]) for i in order}
        best_nu = min(evals, key=evals.get)

        # golden-section polish between the neighbours of the best sample
        i = int(np.where(nus == best_nu)[0][0])
        lo = nus[max(i - 1, 0)]
        hi = nus[min(i + 1, len(nus) - 1)]
        gr = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = float(lo), float(hi)
        x1 = b - gr * (b - a)
        x2 = a + gr * (b - a)
        f1, f2 = full_err(x1), full_err(x2)
        for _ in range(refine_iters):
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - gr * (b - a)
                f1 = full_err(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + gr * (b - a)
                f2 = full_err(x2)
        candidates = dict(evals)
        candidates[x1] = f1
        candidates[x2] = f2
        nu_opt = min(candidates, key=candidates.get)
        cal = calibrated_config(rect_config(nu_opt))
        rows.append({
            "t_gate": float(t_g),
            "nu": float(nu_opt),
            "omega_peak": cal.pulse.omega_peak,
            "full_error": candidates[nu_opt],
            "ld_error": ld_gate_error(cal).bell_error,
            "nu_region": "between" if nu_opt < f_s else "above",
        })
    return rows


def write_density_snapshot(path, wave: BranchWave, grid: MotionalGrid,
                           t: float) -> None:
    """Binary |psi|^2 dump: int32 (n_c, n_s), float64 (X_c, X_s, t), rows."""
    prob = np.abs(wave.psi) ** 2
    with open(path, "wb") as fh:
        np.array([grid.n_c, grid.n_s], dtype="<i4").tofile(fh)
        np.array([grid.extent_c, grid.extent_s, t], dtype="<f8").tofile(fh)
        prob.astype("<f8").tofile(fh)


def read_density_snapshot(path):
    with open(path, "rb") as fh:
        n_c, n_s = np.fromfile(fh, dtype="<i4", count=2)
        extent_c, extent_s, t = np.fromfile(fh, dtype="<f8", count=3)
        prob = np.fromfile(fh, dtype="<f8").reshape(int(n_c), int(n_s))
    return {"n_c": int(n_c), "n_s": int(n_s), "extent_c": float(extent_c),
            "extent_s": float(extent_s), "t": float(t), "density": prob}
