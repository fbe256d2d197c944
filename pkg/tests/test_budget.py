"""Error-budget tests: component models, calibration point, assembly."""
import math

import pytest
from hypothesis import given, strategies as st

from fastgate.budget import (CHIRP_NOTE, RADIAL_NOTE, assemble_budget,
                             budget_table, heating_component,
                             out_of_ld_component, scattering_component)
from fastgate.model import (ConfigError, PulseShape, SimOptions, TrapSpec,
                            pulse_area, validate)
from fastgate.optimizer import Candidate

from conftest import five_segment_pulse, slow_trap


def zero_pulse() -> PulseShape:
    return PulseShape(segments=((50e-9, 1.0),), symmetric=True,
                      edge_time=5e-9, omega_peak=0.0, nu=2.6e6)


class TestScattering:
    def test_calibration_point(self, cal_159):
        # the 1.59 us reference shape at -800 GHz defines the coefficient
        err = scattering_component(cal_159.pulse, -800e9)
        assert err == pytest.approx(6e-4, rel=1e-9)

    def test_zero_pulse(self):
        assert scattering_component(zero_pulse(), -800e9) == 0.0

    def test_zero_detuning_rejected(self, cal_159):
        with pytest.raises(ConfigError):
            scattering_component(cal_159.pulse, 0.0)

    def test_fast_gate_cross_check(self, cal_483):
        # same coefficient, independent gate: checks the area/|detuning|
        # scaling against the expected ~7e-3 at -200 GHz
        err = scattering_component(cal_483.pulse, -200e9)
        assert 7e-3 / 3 < err < 7e-3 * 3

    @given(scale=st.floats(0.1, 10.0), detuning=st.floats(1e10, 1e13))
    def test_linear_in_area_decreasing_in_detuning(self, scale, detuning):
        pulse = five_segment_pulse(omega_peak=2e7)
        base = scattering_component(pulse, detuning)
        scaled = scattering_component(
            five_segment_pulse(omega_peak=2e7 * scale), detuning)
        assert scaled == pytest.approx(scale * base, rel=1e-9)
        farther = scattering_component(pulse, detuning * 1.7)
        assert farther < base

    def test_sign_of_detuning_irrelevant(self, cal_159):
        assert scattering_component(cal_159.pulse, 800e9) == \
            scattering_component(cal_159.pulse, -800e9)


class TestHeating:
    def test_reference_durations(self):
        assert 8e-5 / 2 < heating_component(1.5885e-6, 100.0) < 8e-5 * 2
        assert 3e-5 / 2 < heating_component(482.5e-9, 100.0) < 3e-5 * 2

    def test_zero_rate(self):
        assert heating_component(1e-6, 0.0) == 0.0

    def test_negative_rate_rejected(self):
        with pytest.raises(ConfigError):
            heating_component(1e-6, -1.0)

    @given(t=st.floats(1e-9, 1e-4), n=st.floats(0.0, 1e4),
           a=st.floats(0.1, 10.0))
    def test_linear_in_both_arguments(self, t, n, a):
        base = heating_component(t, n)
        assert heating_component(a * t, n) == pytest.approx(a * base, rel=1e-12)
        assert heating_component(t, a * n) == pytest.approx(a * base, rel=1e-12)


class TestOutOfLd:
    def test_small_coupling_limit(self):
        # weak coupling: both solvers agree, the floored excess vanishes
        pulse = PulseShape(segments=((50e-9, 0.5), (80e-9, 1.0)),
                           symmetric=True, edge_time=5e-9, omega_peak=3e7,
                           nu=6.6e6)
        cfg = validate(TrapSpec(f_c=1.9243e6, eta_c=0.02), pulse,
                       sim=SimOptions(phi0_grid_size=4, grid_points=128))
        val = out_of_ld_component(cfg)
        assert 0.0 <= val < 1e-5


def refined_candidate(pulse, ld=1.2e-4, full=4.1e-4, sens=2.1e-4) -> Candidate:
    return Candidate(pulse=pulse, ld_error=ld, pulse_area=pulse_area(pulse),
                     config_hash="0" * 16, full_error=full,
                     sensitivity_score=sens)


class TestAssembly:
    def test_rows_and_total(self, cal_159):
        cand = refined_candidate(cal_159.pulse)
        b = assemble_budget(cal_159, cand, detuning=-800e9, ndot=100.0)
        assert b.components["out_of_ld"] == pytest.approx(4.1e-4 - 1.2e-4)
        assert b.components["scattering"] == pytest.approx(6e-4, rel=1e-9)
        assert b.components["heating"] == pytest.approx(7.94e-5, rel=1e-2)
        assert b.components["timing_amplitude"] == 2.1e-4
        assert b.components["chirp_note"] == CHIRP_NOTE
        assert b.components["radial_note"] == RADIAL_NOTE

    def test_total_matches_resummation(self, cal_159):
        b = assemble_budget(cal_159, refined_candidate(cal_159.pulse))
        resum = sum(v for v in b.components.values() if isinstance(v, float))
        assert abs(b.total - resum) <= 1e-15

    def test_requires_refined_solution(self, cal_159):
        bare = Candidate(pulse=cal_159.pulse, ld_error=1e-4,
                         pulse_area=1.0, config_hash="x")
        with pytest.raises(ConfigError):
            assemble_budget(cal_159, bare)

    def test_full_below_ld_floors_to_zero(self, cal_159):
        cand = refined_candidate(cal_159.pulse, ld=2e-4, full=1e-4)
        b = assemble_budget(cal_159, cand)
        assert b.components["out_of_ld"] == 0.0

    def test_all_zero_inputs(self):
        cfg = validate(slow_trap(), zero_pulse())
        cand = refined_candidate(zero_pulse(), ld=0.5, full=0.5, sens=0.0)
        b = assemble_budget(cfg, cand, detuning=-800e9, ndot=0.0)
        assert b.total == 0.0
        assert b.components["chirp_note"] == CHIRP_NOTE
        assert b.components["radial_note"] == RADIAL_NOTE

    def test_negative_sensitivity_floored(self, cal_159):
        cand = refined_candidate(cal_159.pulse, sens=-3e-7)
        b = assemble_budget(cal_159, cand)
        assert b.components["timing_amplitude"] == 0.0


class TestRendering:
    def test_text_table_lists_every_row(self, cal_159):
        b = assemble_budget(cal_159, refined_candidate(cal_159.pulse))
        text = b.as_text()
        for key in b.components:
            assert key in text
        assert "total" in text
        assert f"{b.total:.3e}" in text

    def test_side_by_side_table(self, cal_159):
        b = assemble_budget(cal_159, refined_candidate(cal_159.pulse))
        table = budget_table({"slow": b, "fast": b})
        assert "slow" in table and "fast" in table
        assert table.count("(note)") == 4
        assert CHIRP_NOTE in table and RADIAL_NOTE in table

    def test_empty_table(self):
        assert budget_table({}) == ""

    def test_to_dict_round_trip(self, cal_159):
        b = assemble_budget(cal_159, refined_candidate(cal_159.pulse))
        d = b.to_dict()
        assert d["total"] == b.total
        assert d["components"]["scattering"] == b.components["scattering"]
