"""Hardware-rate amplitude streams: compile, compensate, fit back.

Lowers a segmented pulse to an AWG sample stream (sub-sample boundary
timing comes free with the linear edges), inverts a measured drive-to-
optical transfer curve, and fits the segmented-envelope model to recorded
photodiode traces for closed-loop amplitude and timing checks.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .model import ConfigError, PulseShape, SolverError, envelope, envelope_nodes

DEFAULT_RATE = 1.25e9               # samples/s


def pulse_hash(pulse: PulseShape) -> str:
    """sha256 over the packed pulse numerics, for stream provenance."""
    parts = [float(len(pulse.segments)), float(pulse.symmetric)]
    for d, a in pulse.segments:
        parts += [d, a]
    parts += [pulse.edge_time, pulse.omega_peak, pulse.nu, pulse.phi_half]
    return hashlib.sha256(struct.pack(f"<{len(parts)}d", *parts)).hexdigest()


@dataclass(frozen=True)
class SampleStream:
    """Uniform amplitude samples starting at t=0, plus provenance."""
    samples: np.ndarray
    sample_rate: float
    pulse_id: str

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def compile_stream(pulse: PulseShape, sample_rate: float = DEFAULT_RATE,
                   edge: float | None = None,
                   quantize_bits: int | None = None) -> SampleStream:
    """Sample the pulse envelope at the hardware rate.

    Boundaries land with sub-sample accuracy because the linear edge
    spreads each transition over several samples.  `edge` overrides the
    pulse's own rise time; an edge shorter than two sample periods is
    rejected (the boundary would fall between samples).
    """
    if edge is not None:
        pulse = replace(pulse, edge_time=float(edge))
    if pulse.edge_time < 2.0 / sample_rate:
        raise ConfigError("edge_time", "edge must span at least 2 sample "
                          f"periods ({2.0 / sample_rate:.2e} s at this rate)")
    if min(d for d, _ in pulse.segments) < pulse.edge_time:
        raise ConfigError("edge_time", "edge exceeds the shortest segment")
    count = math.ceil(pulse.t_total * sample_rate)
    t = np.arange(count) / sample_rate
    samples = np.asarray(envelope(pulse, t), dtype=float)
    if quantize_bits is not None:
        if quantize_bits < 1:
            raise ConfigError("quantize_bits", "must be >= 1")
        levels = float(2 ** quantize_bits - 1)
        samples = np.round(samples * levels) / levels
    return SampleStream(samples=samples, sample_rate=float(sample_rate),
                        pulse_id=pulse_hash(pulse))


def compensate(stream: SampleStream, transfer_curve) -> SampleStream:
    """Pre-distort the stream through the inverse drive->optical map.

    transfer_curve is a (K, 2) table of (drive, optical) points; both
    columns must be strictly increasing.  Sending the compensated stream
    through the measured curve reproduces the requested envelope.
    """
    curve = np.asarray(transfer_curve, dtype=float)
    if curve.ndim != 2 or curve.shape[1] != 2 or curve.shape[0] < 2:
        raise ConfigError("transfer_curve", "need a (K, 2) table, K >= 2")
    drive, optical = curve[:, 0], curve[:, 1]
    if np.any(np.diff(drive) <= 0) or np.any(np.diff(optical) <= 0):
        raise ConfigError("transfer_curve", "must be strictly monotone")
    want = stream.samples
    if want.max(initial=0.0) > optical[-1] + 1e-12:
        raise ConfigError("transfer_curve",
                          f"unreachable amplitude: requested "
                          f"{want.max():.4f} > curve maximum {optical[-1]:.4f}")
    lo = optical[0]
    fixed = np.clip(want, lo, None)     # below-table floor maps to first knot
    out = np.interp(fixed, optical, drive)
    out[want <= lo] = drive[0] * (want[want <= lo] / lo if lo > 0 else 0.0)
    return SampleStream(samples=out, sample_rate=stream.sample_rate,
                        pulse_id=stream.pulse_id)


# ---------------------------------------------------------------------------
# envelope fitting (photodiode trace -> segment parameters)


@dataclass(frozen=True)
class EnvelopeFit:
    """Fitted segmented-envelope parameters with standard errors."""
    durations: tuple[float, ...]
    amplitudes: tuple[float, ...]
    edge_time: float
    std_durations: tuple[float, ...]
    std_amplitudes: tuple[float, ...]
    std_edge: float
    rms_residual: float

    def to_dict(self) -> dict:
        return {
            "durations": list(self.durations),
            "amplitudes": list(self.amplitudes),
            "edge_time": self.edge_time,
            "std_durations": list(self.std_durations),
            "std_amplitudes": list(self.std_amplitudes),
            "std_edge": self.std_edge,
            "rms_residual": self.rms_residual,
        }


def _model_nodes(durations, amps, edge):
    # same layout as the pulse envelope: ramps start at boundaries
    edge = min(edge, 0.999 * min(durations))
    pulse = PulseShape(segments=tuple(zip(durations, amps)), symmetric=False,
                       edge_time=edge)
    return envelope_nodes(pulse)


def _initial_guess(times, trace, n_segments, edge_guess):
    peak = float(trace.max())
    above = np.nonzero(trace > 0.02 * peak)[0]
    if len(above) < n_segments + 1:
        raise SolverError("trace has no resolvable pulse support")
    t_lo = times[max(above[0] - 1, 0)]
    t_hi = times[min(above[-1] + 1, len(times) - 1)]
    width = max(t_hi - t_lo - edge_guess, n_segments * edge_guess)

    # boundary candidates from derivative runs, equal split as fallback
    kernel = max(int(round(edge_guess * (len(times) - 1)
                           / (times[-1] - times[0]))), 1)
    smooth = np.convolve(trace, np.ones(kernel) / kernel, mode="same")
    slope = np.abs(np.gradient(smooth, times))
    hot = np.concatenate([[False], slope > 0.25 * slope.max(), [False]])
    flips = np.diff(hot.astype(int))
    starts = np.flatnonzero(flips == 1)
    stops = np.flatnonzero(flips == -1)
    centers = None
    edge0 = edge_guess
    if len(starts) == len(stops) and len(starts) == n_segments + 1:
        mid_idx = np.clip((starts + stops) // 2, 0, len(times) - 1)
        cand = times[mid_idx]
        if np.all(np.diff(cand) > 0):
            centers = cand
            dt = times[1] - times[0]
            run = float(np.median(times[np.clip(stops, 0, len(times) - 1)]
                                  - times[starts]))
            edge0 = max(run - kernel * dt, 2 * dt)
    if centers is None:
        centers = t_lo + width * np.arange(n_segments + 1) / n_segments
    durations = np.maximum(np.diff(centers), 2 * edge_guess)
    mids = centers[:-1] + durations / 2
    amps = np.interp(mids, times, trace)
    amps = np.maximum(amps, 0.05 * peak)
    return durations, amps, edge0


def fit_envelope(trace, sample_rate: float, n_segments: int,
                 edge_guess: float = 5e-9,
                 rms_threshold: float = 0.03) -> EnvelopeFit:
    """Least-squares fit of the segmented envelope to a recorded trace.

    The trace is uniform samples from pulse start; `n_segments` counts the
    full (unmirrored) segment list.  Raises on poor fit (rms residual over
    rms_threshold x peak), which catches a wrong segment count.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim != 1 or len(trace) < 2 * n_segments + 3:
        raise ConfigError("trace", "too short for the requested model")
    times = np.arange(len(trace)) / sample_rate
    d0, a0, e0 = _initial_guess(times, trace, n_segments, edge_guess)
    x0 = np.concatenate([d0, a0, [e0]])
    n = n_segments

    def unpack(x):
        return x[:n], x[n:2 * n], x[2 * n]

    def residual(x):
        durations, amps, edge = unpack(x)
        xs, ys = _model_nodes(durations, amps, edge)
        return np.interp(times, xs, ys, left=0.0, right=0.0) - trace

    lower = np.concatenate([np.full(n, 2.0 / sample_rate),
                            np.zeros(n), [0.5 / sample_rate]])
    upper = np.concatenate([np.full(n, times[-1]),
                            np.full(n, 2.0 * trace.max()), [times[-1]]])
    res = least_squares(residual, np.clip(x0, lower, upper),
                        bounds=(lower, upper), x_scale="jac",
                        diff_step=1e-6, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    rms = float(np.sqrt(np.mean(res.fun ** 2)))
    peak = float(trace.max())
    if rms > rms_threshold * peak:
        raise SolverError(
            f"model mismatch: rms residual {rms:.3e} exceeds "
            f"{rms_threshold:.2f} x peak ({peak:.3e}) for {n_segments} "
            "segments; check the segment count and edge model")

    # parameter covariance from the residual jacobian
    dof = max(len(trace) - len(res.x), 1)
    sigma2 = float(np.sum(res.fun ** 2)) / dof
    jtj = res.jac.T @ res.jac
    cov = sigma2 * np.linalg.pinv(jtj)
    std = np.sqrt(np.maximum(np.diag(cov), 0.0))
    durations, amps, edge = unpack(res.x)
    sd, sa, se = unpack(std)
    return EnvelopeFit(
        durations=tuple(float(v) for v in durations),
        amplitudes=tuple(float(v) for v in amps),
        edge_time=float(edge),
        std_durations=tuple(float(v) for v in sd),
        std_amplitudes=tuple(float(v) for v in sa),
        std_edge=float(se), rms_residual=rms)


# ---------------------------------------------------------------------------
# stream file formats


def write_stream_text(stream: SampleStream, path) -> None:
    """Header plus one amplitude per line; floats survive bit-exactly."""
    with open(path, "w") as fh:
        fh.write(f"# sample_rate {stream.sample_rate!r}\n")
        fh.write(f"# length {len(stream.samples)}\n")
        fh.write(f"# pulse {stream.pulse_id}\n")
        for v in stream.samples:
            fh.write(f"{float(v)!r}\n")


def read_stream_text(path) -> SampleStream:
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(" ")
            header[key] = val
        elif line.strip():
            body.append(float(line))
    if "sample_rate" not in header or "length" not in header:
        raise ConfigError("stream", "missing sample_rate/length header")
    if int(header["length"]) != len(body):
        raise ConfigError("stream", "length header does not match body")
    return SampleStream(samples=np.array(body, dtype=float),
                        sample_rate=float(header["sample_rate"]),
                        pulse_id=header.get("pulse", ""))


_MAGIC = b"FGWS"


def write_stream_binary(stream: SampleStream, path) -> None:
    """Magic, rate, length, 64-char hash, then little-endian float64."""
    hash_bytes = stream.pulse_id.ljust(64)[:64].encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<dQ", stream.sample_rate, len(stream.samples)))
        fh.write(hash_bytes)
        fh.write(np.ascontiguousarray(stream.samples, dtype="<f8").tobytes())


def read_stream_binary(path) -> SampleStream:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ConfigError("stream", "not a stream file (bad magic)")
    rate, count = struct.unpack_from("<dQ", blob, 4)
    pulse_id = blob[20:84].decode().strip()
    data = np.frombuffer(blob[84:], dtype="<f8")
    if len(data) != count:
        raise ConfigError("stream", "length header does not match body")
    return SampleStream(samples=data.astype(float), sample_rate=rate,
                        pulse_id=pulse_id)


def read_trace(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column (time, amplitude) text trace."""
    data = np.loadtxt(path)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ConfigError("trace", "expected two columns (t, amplitude)")
    return data[:, 0], data[:, 1]
