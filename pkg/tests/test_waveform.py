import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionmux.chain import ChainConfig, chain_spacings, equilibrium_positions
from ionmux.waveform import (
    FilterModel,
    RampSegment,
    ScheduleTiming,
    StaticPotential,
    TrapCalibration,
    VoltageWaveform,
    apply_lowpass,
    build_schedule,
    potential_trajectory,
    quintic_profile,
    quintic_ramp,
    schedule_potential,
)


@pytest.fixture(scope="module")
def nominal_schedule():
    chain = equilibrium_positions(ChainConfig.from_frequency_hz(9, 179e3))
    return build_schedule(chain_spacings(chain), TrapCalibration())


def test_quintic_endpoints_and_midpoint():
    assert quintic_profile(0.0) == 0.0
    assert quintic_profile(1.0) == 1.0
    assert quintic_profile(0.5) == pytest.approx(0.5)
    assert quintic_profile(-0.3) == 0.0 and quintic_profile(1.7) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_quintic_monotone_and_antisymmetric(taus):
    tau = np.sort(np.array(taus))
    f = quintic_profile(tau)
    assert np.all(np.diff(f) >= -1e-15)
    assert np.allclose(quintic_profile(1 - tau), 1 - f, atol=1e-14)


def test_quintic_has_flat_ends():
    h = 1e-6
    assert quintic_profile(h) / h < 1e-9
    assert (1 - quintic_profile(1 - h)) / h < 1e-9


def test_quintic_ramp_sampling():
    seg = RampSegment(22.985, 0.42, 9.1e-6)
    v = quintic_ramp(seg, 10e-9)
    assert len(v) == 911
    assert v[0] == 22.985 and v[-1] == pytest.approx(22.985 + 0.42, abs=1e-15)
    with pytest.raises(ValueError):
        quintic_ramp(seg, 1e-6)


def test_schedule_layout(nominal_schedule):
    s = nominal_schedule
    assert s.n_steps == 8
    assert s.forward_duration == pytest.approx(86.4e-6)
    assert s.cycle_duration == pytest.approx(448.8e-6)
    assert len(s.dwell_starts) == 9
    assert np.allclose(np.diff(s.dwell_starts), 10.8e-6)
    # total voltage change moves the trap across the whole chain
    span = 75.06e-6
    assert s.total_delta_v * TrapCalibration().center_slope == pytest.approx(span, abs=0.01e-6)


def test_endcaps_antisymmetric_and_return_to_rest(nominal_schedule):
    s = nominal_schedule
    t = np.linspace(0, s.end_time, 4001)
    v1, v2 = s.v1(t), s.v2(t)
    assert np.allclose(v1 + v2, s.v1_rest + s.v2_rest)
    assert 0.5 * (s.v1_rest + s.v2_rest) == pytest.approx(24.24)
    assert v1[0] == pytest.approx(s.v1_rest) and v1[-1] == pytest.approx(s.v1_rest)
    assert s.v1(s.forward_duration) == pytest.approx(s.v1_rest + s.total_delta_v)


def test_scalar_and_vector_evaluation_agree(nominal_schedule):
    t = np.linspace(-1e-6, nominal_schedule.end_time + 1e-6, 257)
    vec = nominal_schedule.v1(t)
    assert np.allclose(vec, [nominal_schedule.v1(float(x)) for x in t])


def test_with_ramp_duration_keeps_dwell(nominal_schedule):
    slow = nominal_schedule.with_ramp_duration(18.2e-6)
    assert slow.forward_duration == pytest.approx(8 * (18.2e-6 + 1.7e-6))
    assert slow.total_delta_v == pytest.approx(nominal_schedule.total_delta_v)
    scaled = nominal_schedule.with_ramp_duration(18.2e-6, scale_dwell=True)
    assert scaled.forward_duration == pytest.approx(2 * nominal_schedule.forward_duration)


def test_build_schedule_validation():
    with pytest.raises(ValueError):
        build_schedule([8e-6, -1e-6], TrapCalibration())
    with pytest.raises(ValueError):
        ScheduleTiming(ramp_duration=0.0)
    with pytest.raises(ValueError):
        TrapCalibration(center_slope=0.0)


def test_waveform_csv_round_trip(nominal_schedule, tmp_path):
    wf = nominal_schedule.to_waveform(20e-9)
    text = wf.to_csv()
    assert text.startswith("time_s,v1,v2\n")
    path = tmp_path / "wf.csv"
    wf.to_csv(path)
    back = VoltageWaveform.from_csv(path)
    assert len(back) == len(wf)
    assert np.allclose(back.samples, wf.samples, atol=1e-9)
    assert back.sample_period == pytest.approx(wf.sample_period)
    with pytest.raises(ValueError):
        VoltageWaveform.from_csv("t,a,b\n0,1,2\n")


def test_lowpass_preserves_dc_and_tracks_ramp_exactly():
    dt, tau_cut = 10e-9, 1.9e6
    filt = FilterModel(tau_cut)
    tau = filt.time_constant
    n = 2000
    t = np.arange(n) * dt
    flat = VoltageWaveform(dt, np.column_stack([np.full(n, 3.0), np.full(n, -1.0)]))
    assert np.allclose(apply_lowpass(flat, filt).samples, flat.samples)
    # linear ramp from rest: y = r (t - tau (1 - exp(-t/tau)))
    r = 1e5
    ramp = VoltageWaveform(dt, np.column_stack([r * t, np.zeros(n)]))
    out = apply_lowpass(ramp, filt).v1
    exact = r * (t - tau * (1 - np.exp(-t / tau)))
    assert np.allclose(out, exact, atol=1e-12)


def test_lowpass_cascade_and_warning():
    dt = 10e-9
    step = VoltageWaveform(dt, np.column_stack([np.r_[np.zeros(10), np.ones(990)], np.zeros(1000)]))
    one = apply_lowpass(step, FilterModel(1.9e6, 1)).v1
    two = apply_lowpass(step, FilterModel(1.9e6, 2)).v1
    assert np.all(two <= one + 1e-15)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        apply_lowpass(step, FilterModel(1.0))
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_potential_trajectory_matches_schedule(nominal_schedule):
    calib = TrapCalibration()
    wf = nominal_schedule.to_waveform(10e-9, include_return=False)
    traj = potential_trajectory(wf, calib)
    analytic = schedule_potential(nominal_schedule, calib, forward_only=True)
    t = np.linspace(0, nominal_schedule.forward_duration, 777)
    assert np.allclose(traj.center(t), analytic.center(t), atol=1e-12)
    assert np.allclose(traj.omega(t), calib.omega0)
    assert analytic.t_end == pytest.approx(nominal_schedule.forward_duration)


def test_static_potential_jump():
    pot = StaticPotential(0.0, 1e6, 1e-5, jumps=((5e-6, 2e-6),))
    assert pot.center(4e-6) == 0.0
    assert pot.center(6e-6) == 2e-6
    assert list(pot.breakpoints) == [0.0, 5e-6, 1e-5]
