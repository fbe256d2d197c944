"""Core model: derived constants, envelope shape, validation errors."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastgate.model import (ConfigError, PulseShape, SimOptions, SpinCoupling,
                            TrapSpec, envelope, envelope_pieces, pulse_area,
                            validate)

F_C = 1.9243e6  # Hz


def five_segment_pulse(omega_peak=1.0e6):
    # symmetric half-list, centre segment last
    return PulseShape(
        segments=((82.1e-9, 0.445), (299.9e-9, 0.838), (819.5e-9, 1.0)),
        symmetric=True, edge_time=5e-9, omega_peak=omega_peak, nu=2.6301e6)


def seven_segment_pulse(omega_peak=1.0e6):
    return PulseShape(
        segments=((71.4e-9, 0.284), (64.5e-9, 0.617), (46.7e-9, 0.862),
                  (112.3e-9, 1.0)),
        symmetric=True, edge_time=5e-9, omega_peak=omega_peak, nu=6.3802e6)


class TestDerivedConstants:
    def test_stretch_frequency_ratio_exact(self):
        trap = TrapSpec(f_c=F_C)
        assert trap.f_s / trap.f_c == pytest.approx(math.sqrt(3.0), abs=1e-12)

    def test_stretch_frequency_example(self):
        # 1.92 MHz COM gives a 3.3255 MHz stretch mode
        trap = TrapSpec(f_c=1.92e6)
        assert trap.f_s == pytest.approx(3.3255e6, rel=1e-4)

    def test_lamb_dicke_ratio(self):
        trap = TrapSpec(f_c=F_C, eta_c=0.126)
        assert trap.eta_s / trap.eta_c == pytest.approx(3.0 ** -0.25, abs=1e-12)
        # quoted rounded value ~0.0958
        assert trap.eta_s == pytest.approx(0.0958, abs=2e-4)

    def test_ion_phases_antiphase(self):
        trap = TrapSpec(f_c=F_C, spacing_periods=12.5)
        assert trap.ion_phase(0) == 0.0
        assert trap.ion_phase(1) == pytest.approx(math.pi, abs=0.0)

    def test_gate_durations_match_quoted_times(self):
        # five-segment: 1588.5 ns, seven-segment: 482.5 ns
        assert five_segment_pulse().t_total == pytest.approx(1588.5e-9, rel=1e-12)
        assert seven_segment_pulse().t_total == pytest.approx(482.5e-9, rel=1e-12)


class TestEnvelope:
    def test_zero_at_ends_and_peak_at_centre(self):
        p = five_segment_pulse()
        assert envelope(p, 0.0) == 0.0
        assert envelope(p, p.t_total) == 0.0
        assert envelope(p, p.t_total / 2) == 1.0

    def test_ramp_midpoint_interpolates(self):
        p = five_segment_pulse()
        # ramp from the first plateau (0.445) into the second (0.838)
        # starts at the first segment boundary
        t_mid = 82.1e-9 + 0.5 * p.edge_time
        assert envelope(p, t_mid) == pytest.approx(0.6415, abs=1e-12)

    def test_mirror_symmetry_dense(self):
        for p in (five_segment_pulse(), seven_segment_pulse()):
            t = np.linspace(0.0, p.t_total, 4001)
            fwd = envelope(p, t)
            rev = envelope(p, p.t_total - t)
            assert np.max(np.abs(fwd - rev)) < 1e-12

    def test_out_of_range_rejected(self):
        p = five_segment_pulse()
        with pytest.raises(ValueError):
            envelope(p, -1e-9)
        with pytest.raises(ValueError):
            envelope(p, p.t_total + 1e-9)

    def test_area_invariant_under_segment_split(self):
        p = PulseShape(segments=((200e-9, 0.5), (400e-9, 1.0)),
                       symmetric=True, edge_time=10e-9, omega_peak=2e6, nu=2e6)
        # split the centre segment into two equal halves, same amplitude,
        # as a non-symmetric explicit list
        full = p.full_segments()
        split = []
        for d, a in full:
            if a == 1.0:
                split += [(d / 2, a), (d / 2, a)]
            else:
                split.append((d, a))
        q = PulseShape(segments=tuple(split), symmetric=False,
                       edge_time=10e-9, omega_peak=2e6, nu=2e6)
        assert pulse_area(q) == pytest.approx(pulse_area(p), rel=1e-12)

    def test_zero_edge_time_step_envelope(self):
        p = PulseShape(segments=((100e-9, 1.0),), symmetric=False,
                       edge_time=0.0, omega_peak=1e6, nu=2e6)
        assert envelope(p, 50e-9) == 1.0
        assert envelope(p, 0.0) == 1.0  # right-continuous step
        assert envelope(p, p.t_total) == 0.0

    @given(st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=25, deadline=None)
    def test_envelope_bounded_by_peak(self, frac):
        p = seven_segment_pulse()
        val = envelope(p, frac * p.t_total)
        assert -1e-15 <= val <= 1.0 + 1e-15


class TestValidation:
    def trap(self):
        return TrapSpec(f_c=F_C)

    def test_valid_config_materializes_derived(self):
        cfg = validate(self.trap(), five_segment_pulse())
        assert cfg.f_s == pytest.approx(math.sqrt(3) * F_C, rel=1e-15)
        assert cfg.t_gate == pytest.approx(1588.5e-9)
        assert cfg.geometry.antiphase

    def test_idempotent(self):
        cfg = validate(self.trap(), five_segment_pulse())
        again = validate(cfg)
        assert again == cfg

    def test_empty_segments(self):
        with pytest.raises(ConfigError, match="no segments"):
            validate(self.trap(), PulseShape(segments=(), omega_peak=1e6, nu=2e6))

    def test_spacing_must_be_half_integer(self):
        with pytest.raises(ConfigError, match="spacing_periods"):
            validate(TrapSpec(f_c=F_C, spacing_periods=12.3), five_segment_pulse())

    def test_amplitude_range(self):
        bad = PulseShape(segments=((100e-9, 1.2),), omega_peak=1e6, nu=2e6)
        with pytest.raises(ConfigError, match="amplitude"):
            validate(self.trap(), bad)

    def test_peak_amplitude_normalization(self):
        bad = PulseShape(segments=((100e-9, 0.5),), omega_peak=1e6, nu=2e6,
                         edge_time=1e-9)
        with pytest.raises(ConfigError, match="peak relative amplitude"):
            validate(self.trap(), bad)

    def test_edge_exceeding_segment(self):
        bad = PulseShape(segments=((4e-9, 1.0),), edge_time=5e-9,
                         omega_peak=1e6, nu=2e6)
        with pytest.raises(ConfigError, match="edge_time"):
            validate(self.trap(), bad)

    def test_nonpositive_frequencies(self):
        with pytest.raises(ConfigError, match="f_c"):
            validate(TrapSpec(f_c=-1.0), five_segment_pulse())
        bad = PulseShape(segments=((100e-9, 1.0),), omega_peak=1e6, nu=0.0,
                         edge_time=1e-9)
        with pytest.raises(ConfigError, match="nu"):
            validate(self.trap(), bad)

    def test_grid_points_power_of_two(self):
        with pytest.raises(ConfigError, match="grid_points"):
            validate(self.trap(), five_segment_pulse(),
                     sim=SimOptions(grid_points=200))

    def test_phi0_grid_minimum(self):
        with pytest.raises(ConfigError, match="phi0_grid_size"):
            validate(self.trap(), five_segment_pulse(),
                     sim=SimOptions(phi0_grid_size=1))

    def test_equal_couplings_allowed(self):
        # no differential force is a degenerate but representable setup
        cfg = validate(self.trap(), five_segment_pulse(),
                       coupling=SpinCoupling(lambda_down=1.0, lambda_up=1.0))
        assert cfg.coupling.lambda_up == cfg.coupling.lambda_down

    def test_content_hash_stable_and_sensitive(self):
        cfg = validate(self.trap(), five_segment_pulse())
        cfg2 = validate(self.trap(), five_segment_pulse())
        assert cfg.content_hash() == cfg2.content_hash()
        cfg3 = validate(self.trap(), five_segment_pulse(omega_peak=2e6))
        assert cfg.content_hash() != cfg3.content_hash()
