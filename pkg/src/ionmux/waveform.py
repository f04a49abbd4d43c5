"""Endcap voltage ramps, multi-step transport schedules, the amplifier
low-pass filter and the voltage-to-potential calibration map.

Time origin for a :class:`StepSchedule` is the start of the forward
transport (right after optical pumping). The forward pass alternates a dwell
with the addressed ion in focus and a quintic ramp to the next ion; the
return ramp starts immediately after the last forward ramp.
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
import bisect
import io
import math
import os
import warnings

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from .constants import TWO_PI

__all__ = [
    "RampSegment",
    "ScheduleTiming",
    "StepSchedule",
    "VoltageWaveform",
    "TrapCalibration",
    "FilterModel",
    "PotentialTrajectory",
    "SchedulePotential",
    "StaticPotential",
    "quintic_profile",
    "quintic_ramp",
    "build_schedule",
    "apply_lowpass",
    "potential_trajectory",
    "schedule_potential",
    "NOMINAL_TIMING",
]


def quintic_profile(tau):
    """``10 tau^3 - 15 tau^4 + 6 tau^5`` clipped to [0, 1] outside the ramp."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)


def _quintic_rate(tau):
    inside = (tau > 0) & (tau < 1)
    return np.where(inside, 30.0 * tau ** 2 * (1.0 - tau) ** 2, 0.0)


@dataclass(frozen=True)
class RampSegment:
    v_start: float
    delta_v: float
    duration: float
    start_time: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("ramp duration must be positive")

    @property
    def end_time(self):
        return self.start_time + self.duration

    def value(self, t):
        tau = (np.asarray(t, dtype=float) - self.start_time) / self.duration
        return self.v_start + self.delta_v * quintic_profile(tau)

    def rate(self, t):
        tau = (np.asarray(t, dtype=float) - self.start_time) / self.duration
        return self.delta_v / self.duration * _quintic_rate(tau)


def quintic_ramp(segment, sample_period):
    """Sample one ramp on a uniform grid covering ``[0, T]`` inclusive.

    The grid uses ``ceil(T / sample_period)`` intervals so both endpoints are
    hit exactly.
    """
    if sample_period > segment.duration / 10:
        raise ValueError("sample_period must be at most duration / 10")
    n = int(math.ceil(segment.duration / sample_period - 1e-9))
    t = segment.start_time + np.linspace(0.0, segment.duration, n + 1)
    return segment.value(t)


@dataclass(frozen=True)
class ScheduleTiming:
    ramp_duration: float = 9.1e-6
    dwell: float = 1.7e-6
    return_duration: float = 35e-6
    pump_duration: float = 3e-6
    cooling_duration: float = 200e-6
    repeats_per_cooling: int = 2

    def __post_init__(self):
        for name in ("ramp_duration", "return_duration", "pump_duration", "cooling_duration"):
            if not np.all(np.asarray(getattr(self, name)) > 0):
                raise ValueError(f"{name} must be positive")
        if not np.all(np.asarray(self.dwell) >= 0):
            raise ValueError("dwell must be non-negative")
        if self.repeats_per_cooling < 1:
            raise ValueError("repeats_per_cooling must be >= 1")


NOMINAL_TIMING = ScheduleTiming()


@dataclass(frozen=True)
class TrapCalibration:
    """Linear map from endcap-1 voltage change to trap-centre displacement.

    ``omega0`` is the axial frequency at the rest voltages. ``freq_slope``
    (rad/s per volt of mean endcap voltage) gives an optional affine
    frequency model; the default anti-symmetric drive keeps the mean fixed.
    """
    center_slope: float = 2.0e-5  # m/V
    v1_rest: float = 22.985
    v2_rest: float = 25.495
    omega0: float = TWO_PI * 179e3
    freq_slope: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.center_slope) and self.center_slope != 0):
            raise ValueError("center_slope must be finite and nonzero")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")

    @property
    def base_voltage(self):
        return 0.5 * (self.v1_rest + self.v2_rest)

    @property
    def endcap_offset(self):
        return self.v2_rest - self.v1_rest

    def freq_model(self, mean_voltage):
        return self.omega0 + self.freq_slope * (np.asarray(mean_voltage) - self.base_voltage)

    def center(self, v1):
        if np.ndim(v1) == 0:
            return self.center_slope * (float(v1) - self.v1_rest)
        return self.center_slope * (np.asarray(v1, dtype=float) - self.v1_rest)


@dataclass(frozen=True)
class StepSchedule:
    """Forward steps plus one return ramp, all on endcap 1.

    Endcap 2 is driven anti-symmetrically: ``v2 = v2_rest - (v1 - v1_rest)``.
    """
    segments: tuple  # forward RampSegments, endcap 1
    dwell_times: tuple  # one dwell before each forward segment
    return_segment: RampSegment
    pump_duration: float
    cooling_duration: float
    repeats_per_cooling: int
    v1_rest: float
    v2_rest: float

    @property
    def return_duration(self):
        return self.return_segment.duration

    @property
    def n_steps(self):
        return len(self.segments)

    @property
    def forward_duration(self):
        return self.segments[-1].end_time if self.segments else 0.0

    @property
    def pass_duration(self):
        """Pump plus forward plus return."""
        return self.pump_duration + self.forward_duration + self.return_duration

    @property
    def cycle_duration(self):
        return self.cooling_duration + self.repeats_per_cooling * self.pass_duration

    @property
    def end_time(self):
        return self.return_segment.end_time

    @property
    def dwell_starts(self):
        """Start of each addressing window: one per forward dwell, plus the
        start of the return ramp where the last ion still sits in focus."""
        starts = [seg.start_time - dwell for seg, dwell in zip(self.segments, self.dwell_times)]
        starts.append(self.return_segment.start_time)
        return np.array(starts)

    @property
    def breakpoints(self):
        pts = {0.0}
        for seg in (*self.segments, self.return_segment):
            pts.add(seg.start_time)
            pts.add(seg.end_time)
        return np.array(sorted(pts))

    @property
    def total_delta_v(self):
        return sum(seg.delta_v for seg in self.segments)

    def v1(self, t):
        if np.ndim(t) == 0:
            return self._v1_scalar(float(t))
        t = np.asarray(t, dtype=float)
        v = np.full(t.shape, self.v1_rest)
        for seg in (*self.segments, self.return_segment):
            v = v + seg.delta_v * quintic_profile((t - seg.start_time) / seg.duration)
        return v

    def _v1_scalar(self, t):
        # integrator hot path: only the active ramp contributes a fraction
        segs = self._all_segments
        k = bisect.bisect_right(self._starts, t) - 1
        if k < 0:
            return self.v1_rest
        seg = segs[k]
        tau = (t - seg.start_time) / seg.duration
        if tau >= 1.0:
            return seg.v_start + seg.delta_v
        return seg.v_start + seg.delta_v * tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)

    @cached_property
    def _all_segments(self):
        return (*self.segments, self.return_segment)

    @cached_property
    def _starts(self):
        return [seg.start_time for seg in self._all_segments]

    def v1_rate(self, t):
        t = np.asarray(t, dtype=float)
        r = np.zeros(t.shape)
        for seg in (*self.segments, self.return_segment):
            r = r + seg.rate(t)
        return r

    def v2(self, t):
        return self.v2_rest - (self.v1(t) - self.v1_rest)

    def scaled(self, factor):
        """Same schedule with every ramp and dwell stretched by ``factor``."""
        if not factor > 0:
            raise ValueError("factor must be positive")
        return _assemble(
            [s.delta_v for s in self.segments],
            [s.duration * factor for s in self.segments],
            [d * factor for d in self.dwell_times],
            self.return_duration * factor,
            self.pump_duration, self.cooling_duration, self.repeats_per_cooling,
            self.v1_rest, self.v2_rest,
        )

    def with_ramp_duration(self, duration, scale_dwell=False):
        """Every forward ramp set to ``duration``; dwells stay fixed unless
        ``scale_dwell`` stretches them by the same factor as the first ramp."""
        if not duration > 0:
            raise ValueError("duration must be positive")
        factor = duration / self.segments[0].duration
        dwells = [d * factor for d in self.dwell_times] if scale_dwell else list(self.dwell_times)
        return _assemble(
            [s.delta_v for s in self.segments], [duration] * self.n_steps, dwells,
            self.return_duration, self.pump_duration, self.cooling_duration,
            self.repeats_per_cooling, self.v1_rest, self.v2_rest,
        )

    def to_waveform(self, sample_period=10e-9, include_return=True, t_end=None):
        if t_end is None:
            t_end = self.end_time if include_return else self.forward_duration
        n = int(math.ceil(t_end / sample_period - 1e-9))
        t = np.arange(n + 1) * sample_period
        v1 = self.v1(t)
        return VoltageWaveform(sample_period, np.column_stack([v1, self.v2(t)]))


def _assemble(deltas, durations, dwells, return_duration, pump, cooling, repeats, v1_rest, v2_rest):
    segments = []
    t = 0.0
    v = v1_rest
    for dv, dur, dwell in zip(deltas, durations, dwells):
        t += dwell
        segments.append(RampSegment(v, dv, dur, t))
        t += dur
        v += dv
    ret = RampSegment(v, v1_rest - v, return_duration, t)
    return StepSchedule(tuple(segments), tuple(dwells), ret, pump, cooling, repeats, v1_rest, v2_rest)


def build_schedule(spacings, calibration, timing=NOMINAL_TIMING):
    """One forward ramp per ion spacing, ``delta_v = spacing / center_slope``.

    ``spacings[k]`` is the gap crossed at step ``k``. ``timing.ramp_duration``
    and ``timing.dwell`` may be scalars or per-step sequences.
    """
    spacings = np.atleast_1d(np.asarray(spacings, dtype=float))
    if spacings.size == 0 or np.any(~(spacings > 0)):
        raise ValueError("spacings must be positive")
    n = spacings.size
    durations = np.broadcast_to(np.asarray(timing.ramp_duration, dtype=float), (n,))
    dwells = np.broadcast_to(np.asarray(timing.dwell, dtype=float), (n,))
    if np.any(durations <= 0) or np.any(dwells < 0):
        raise ValueError("ramp durations must be positive and dwells non-negative")
    deltas = spacings / calibration.center_slope
    return _assemble(
        deltas.tolist(), durations.tolist(), dwells.tolist(), timing.return_duration,
        timing.pump_duration, timing.cooling_duration, timing.repeats_per_cooling,
        calibration.v1_rest, calibration.v2_rest,
    )


@dataclass(frozen=True)
class VoltageWaveform:
    sample_period: float
    samples: np.ndarray  # (n, 2): v1, v2
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 2:
            raise ValueError("samples must have shape (n, 2)")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def times(self):
        return self.t0 + np.arange(len(self.samples)) * self.sample_period

    @property
    def duration(self):
        return (len(self.samples) - 1) * self.sample_period

    @property
    def v1(self):
        return self.samples[:, 0]

    @property
    def v2(self):
        return self.samples[:, 1]

    def to_csv(self, dest=None):
        """Write ``time_s,v1,v2``; returns the text when ``dest`` is None."""
        buf = io.StringIO()
        buf.write("time_s,v1,v2\n")
        for t, (v1, v2) in zip(self.times, self.samples):
            buf.write(f"{t:.12f},{v1:.9f},{v2:.9f}\n")
        text = buf.getvalue()
        if dest is None:
            return text
        with open(dest, "w", newline="\n") as fh:
            fh.write(text)

    @classmethod
    def from_csv(cls, source):
        if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source):
            with open(source) as fh:
                text = fh.read()
        elif hasattr(source, "read"):
            text = source.read()
        else:
            text = source
        lines = text.splitlines()
        if not lines or lines[0].strip() != "time_s,v1,v2":
            raise ValueError("waveform CSV must start with header 'time_s,v1,v2'")
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln.strip()])
        if len(data) < 2:
            raise ValueError("waveform needs at least two samples")
        dt = np.diff(data[:, 0])
        period = float(np.mean(dt))
        if np.max(np.abs(dt - period)) > 1e-6 * period:
            raise ValueError("waveform CSV is not uniformly sampled")
        return cls(period, data[:, 1:], float(data[0, 0]))


@dataclass(frozen=True)
class FilterModel:
    cutoff_freq: float = 1.9e6  # Hz
    order: int = 1

    def __post_init__(self):
        if not self.cutoff_freq > 0:
            raise ValueError("cutoff_freq must be positive")
        if self.order < 1:
            raise ValueError("order must be >= 1")

    @property
    def time_constant(self):
        return 1.0 / (TWO_PI * self.cutoff_freq)


def _rc_coefficients(h, tau):
    # exact response of an RC stage to a piecewise-linear input
    a = math.exp(-h / tau)
    c = tau * (1.0 - a) / h
    return np.array([1.0 - c, c - a]), np.array([1.0, -a])


def apply_lowpass(waveform, filt):
    """Cascade of ``filt.order`` identical RC stages, started in steady state."""
    total = waveform.duration
    if total > 0 and filt.cutoff_freq < 1.0 / (10.0 * total):
        warnings.warn(
            f"cutoff {filt.cutoff_freq:.3g} Hz is below 1/(10 x duration); "
            "the filtered waveform will be severely distorted",
            RuntimeWarning,
            stacklevel=2,
        )
    b, a = _rc_coefficients(waveform.sample_period, filt.time_constant)
    zi_unit = signal.lfilter_zi(b, a)
    out = waveform.samples.copy()
    for _ in range(filt.order):
        for ch in range(out.shape[1]):
            x = out[:, ch]
            out[:, ch], _ = signal.lfilter(b, a, x, zi=zi_unit * x[0])
    return VoltageWaveform(waveform.sample_period, out, waveform.t0)


class PotentialTrajectory:
    """Trap centre and axial frequency sampled on the waveform grid.

    Calling the object interpolates both with cubic splines, which is what
    the transport integrator uses for filtered or measured waveforms.
    """

    def __init__(self, times, center, omega):
        self.times = np.asarray(times, dtype=float)
        self.center_samples = np.asarray(center, dtype=float)
        self.omega_samples = np.asarray(omega, dtype=float)
        self._center = CubicSpline(self.times, self.center_samples)
        self._omega = CubicSpline(self.times, self.omega_samples)
        self.breakpoints = np.array([self.times[0], self.times[-1]])

    @property
    def t_start(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    def center(self, t):
        t = np.clip(t, self.times[0], self.times[-1])
        return self._center(t)

    def omega(self, t):
        t = np.clip(t, self.times[0], self.times[-1])
        return self._omega(t)

    def center_rate(self, t):
        inside = (np.asarray(t) >= self.times[0]) & (np.asarray(t) <= self.times[-1])
        return np.where(inside, self._center(t, 1), 0.0)


def potential_trajectory(waveform, calibration):
    v1 = waveform.v1
    mean = 0.5 * (waveform.v1 + waveform.v2)
    return PotentialTrajectory(
        waveform.times, calibration.center(v1), calibration.freq_model(mean)
    )


@dataclass(frozen=True)
class SchedulePotential:
    """Analytic centre/frequency of a :class:`StepSchedule` (no sampling)."""
    schedule: StepSchedule
    calibration: TrapCalibration
    t_end: float = None
    omega_override: float = None
    t_start: float = 0.0

    def __post_init__(self):
        if self.t_end is None:
            object.__setattr__(self, "t_end", self.schedule.end_time)

    @property
    def breakpoints(self):
        pts = self.schedule.breakpoints
        pts = pts[(pts > self.t_start) & (pts < self.t_end)]
        return np.concatenate([[self.t_start], pts, [self.t_end]])

    def center(self, t):
        return self.calibration.center(self.schedule.v1(t))

    def center_rate(self, t):
        return self.calibration.center_slope * self.schedule.v1_rate(t)

    def omega(self, t):
        if self.omega_override is not None:
            return np.full(np.shape(t), self.omega_override) if np.ndim(t) else self.omega_override
        mean = 0.5 * (self.schedule.v1(t) + self.schedule.v2(t))
        return self.calibration.freq_model(mean)


def schedule_potential(schedule, calibration, *, forward_only=False, hold=0.0, omega=None):
    """Analytic potential for ``schedule``; optionally stop after the forward
    pass and hold the final potential for ``hold`` seconds."""
    end = schedule.forward_duration if forward_only else schedule.end_time
    return SchedulePotential(schedule, calibration, end + hold, omega)


@dataclass(frozen=True)
class StaticPotential:
    center_value: float
    omega_value: float
    t_end: float
    t_start: float = 0.0
    jumps: tuple = field(default=())  # (time, new_center) pairs

    @property
    def breakpoints(self):
        pts = [self.t_start] + [t for t, _ in self.jumps if self.t_start < t < self.t_end] + [self.t_end]
        return np.array(pts)

    def center(self, t):
        c = np.full(np.shape(t), self.center_value, dtype=float)
        for tj, value in self.jumps:
            c = np.where(np.asarray(t) >= tj, value, c)
        return c if np.ndim(t) else float(c)

    def center_rate(self, t):
        return np.zeros(np.shape(t)) if np.ndim(t) else 0.0

    def omega(self, t):
        return np.full(np.shape(t), self.omega_value) if np.ndim(t) else self.omega_value

    def with_end(self, t_end):
        return replace(self, t_end=t_end)
