"""Per-source gate error components and their linear total.

Coherent error beyond the linearized-coupling model comes from comparing
the two solvers; photon scattering and motional heating use one-constant
analytic models.  Laser phase chirp and radial-mode excitation are
acknowledged but not modeled; they appear as annotation strings and do
not contribute to the numeric total.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import ConfigError, PulseShape, ValidatedConfig, pulse_area
from .ldsolver import ld_gate_error
from .optimizer import Candidate

# Scattering model: error = SCATTER_COEFF * pulse_area / |detuning|.
# The coefficient is calibrated once so the reference 1.59 us five-segment
# gate (area 28.9468 rad after phase calibration) at a -800 GHz detuning
# comes out at 6.0e-4.
SCATTER_COEFF = 6e-4 * 800e9 / 28.946834834815178   # Hz/rad

# Heating model: error = HEATING_COEFF * ndot * t_gate.  The 1/2 prefactor
# reproduces the measured-rate expectations at both reference durations.
HEATING_COEFF = 0.5

CHIRP_NOTE = ("out of scope: drive-synthesis phase chirp is hardware "
              "specific; inject a measured phi_pert(t) via "
              "fullsolver.propagate_full for robustness studies")
RADIAL_NOTE = ("out of scope: radial-mode excitation requires radial trap "
               "frequencies and geometry not modeled here")


@dataclass(frozen=True)
class ErrorBudget:
    """Named error contributions plus their linear sum.

    components maps each source to a float (counted in the total) or to
    an annotation string (listed but not summed).
    """
    components: dict[str, float | str]
    total: float

    def numeric_items(self) -> list[tuple[str, float]]:
        return [(k, v) for k, v in self.components.items()
                if isinstance(v, float)]

    def to_dict(self) -> dict:
        return {"components": dict(self.components), "total": self.total}

    def as_text(self) -> str:
        """Aligned two-column table, one row per source."""
        width = max(len(k) for k in self.components) + 2
        lines = []
        for key, val in self.components.items():
            shown = f"{val:.3e}" if isinstance(val, float) else val
            lines.append(f"{key:<{width}}{shown}")
        lines.append(f"{'total':<{width}}{self.total:.3e}")
        return "\n".join(lines)


def _linear_total(components: dict[str, float | str]) -> float:
    return sum(v for v in components.values() if isinstance(v, float))


def out_of_ld_component(config: ValidatedConfig) -> float:
    """Coherent error beyond the linearized model, floored at zero.

    Runs both solvers on the same configuration and returns the excess of
    the grid-solver error over the linear-model error.
    """
    from .fullsolver import full_gate_error

    ld = ld_gate_error(config).bell_error
    full = full_gate_error(config).bell_error
    return max(full - ld, 0.0)


def scattering_component(pulse: PulseShape, detuning: float,
                         coeff: float = SCATTER_COEFF) -> float:
    """Photon-scattering error: coeff * integrated Rabi area / |detuning|."""
    if detuning == 0:
        raise ConfigError("detuning", "must be nonzero")
    return coeff * pulse_area(pulse) / abs(detuning)


def heating_component(t_gate: float, ndot: float,
                      coeff: float = HEATING_COEFF) -> float:
    """Motional-heating error: coeff * quanta-per-second * gate time."""
    if ndot < 0:
        raise ConfigError("ndot", "must be nonnegative")
    return coeff * ndot * t_gate


def assemble_budget(config: ValidatedConfig, solution: Candidate,
                    detuning: float = -800e9,
                    ndot: float = 100.0) -> ErrorBudget:
    """Build the full budget for a refined pulse solution.

    The solution must carry both a grid-solver error and a sensitivity
    score (timing/amplitude jitter response); the beyond-linear-model row
    reuses those stored values rather than re-running the solvers.
    """
    if solution.full_error is None or solution.sensitivity_score is None:
        raise ConfigError("solution", "needs full_error and sensitivity_score (run refine_full and sensitivity first)")
    components: dict[str, float | str] = {
        "out_of_ld": max(solution.full_error - solution.ld_error, 0.0),
        "scattering": scattering_component(solution.pulse, detuning),
        "heating": heating_component(solution.pulse.t_total, ndot),
        "timing_amplitude": max(solution.sensitivity_score, 0.0),
        "chirp_note": CHIRP_NOTE,
        "radial_note": RADIAL_NOTE,
    }
    return ErrorBudget(components=components,
                       total=_linear_total(components))


def budget_table(budgets: dict[str, ErrorBudget]) -> str:
    """Side-by-side text table for several budgets (one column each)."""
    if not budgets:
        return ""
    keys = list(next(iter(budgets.values())).components)
    label_w = max(len(k) for k in keys + ["total"]) + 2
    col_w = max(12, max(len(name) for name in budgets) + 2)
    header = " " * label_w + "".join(f"{name:>{col_w}}" for name in budgets)
    lines = [header]
    for key in keys:
        row = f"{key:<{label_w}}"
        for b in budgets.values():
            val = b.components.get(key, "")
            shown = f"{val:.3e}" if isinstance(val, float) else "(note)"
            row += f"{shown:>{col_w}}"
        lines.append(row)
    row = f"{'total':<{label_w}}"
    row += "".join(f"{b.total:>{col_w}.3e}" for b in budgets.values())
    lines.append(row)
    notes = {v for b in budgets.values()
             for v in b.components.values() if isinstance(v, str)}
    lines.extend(sorted(notes))
    return "\n".join(lines)
