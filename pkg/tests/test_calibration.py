import json
import math

import numpy as np
import pytest

from apesim.calibration import (
    CalibrationError,
    CalibrationRecord,
    analytic_z_pi,
    beta_epsilon,
    calibrate_z,
    golden_section,
    half_pi_check,
    measure_f21,
    optimize_beta,
    run_pipeline,
    track_frequency,
    tune_amplitude,
    two_d_ramsey,
)
from apesim.pulse_lib import GAUSSIAN_ONLY, HALF_DERIVATIVE, TRUNCATED_FRACTION, amplitude_for_angle
from apesim.qudit_sim import QuditParams

P2 = QuditParams(dim=2)
P3 = QuditParams()
# frozen from tests/oracle.py: dense-grid P1 maximum and the beta zero crossing at the seed amplitude
ORACLE_AMP_GAUSS_PI = 0.4921086133634198
ORACLE_AMP_HD_PI = 0.49746565569358053
ORACLE_BETA_ZERO = 0.5011891347716171


@pytest.fixture(scope="module")
def record():
    return run_pipeline(P3)


def test_golden_section_parabola():
    x, fx = golden_section(lambda v: (v - 0.3) ** 2 + 1.0, -1.0, 2.0)
    assert x == pytest.approx(0.3, abs=1e-7) and fx == pytest.approx(1.0)


def test_two_level_amplitude_is_area_theorem():
    for theta in (math.pi, math.pi / 2):
        a = tune_amplitude(P2, GAUSSIAN_ONLY, theta, 6.0)
        assert a == pytest.approx(amplitude_for_angle(theta, 6.0) / TRUNCATED_FRACTION, rel=1e-3)


def test_three_level_amplitudes_match_oracle():
    assert tune_amplitude(P3, GAUSSIAN_ONLY, math.pi, 6.0) == pytest.approx(ORACLE_AMP_GAUSS_PI, rel=1e-4)
    assert tune_amplitude(P3, HALF_DERIVATIVE, math.pi, 6.0) == pytest.approx(ORACLE_AMP_HD_PI, rel=1e-4)


def test_half_pi_consistency_and_idempotence():
    pi_amp = tune_amplitude(P3, HALF_DERIVATIVE, math.pi, 6.0)
    half = tune_amplitude(P3, HALF_DERIVATIVE, math.pi / 2, 6.0)
    assert abs(half / (pi_amp / 2) - 1) <= 0.01
    assert half_pi_check(P3, HALF_DERIVATIVE, 6.0, pi_amp, half) <= 0.01
    again = tune_amplitude(P3, HALF_DERIVATIVE, math.pi, 6.0, seed=pi_amp)
    assert abs(again / pi_amp - 1) <= 1e-4


def test_tune_amplitude_validation():
    with pytest.raises(ValueError):
        tune_amplitude(P3, GAUSSIAN_ONLY, math.pi, 0.0)
    with pytest.raises(CalibrationError):
        tune_amplitude(P3, GAUSSIAN_ONLY, math.pi, 6.0, seed=0.3, bracket=0.1)


@pytest.mark.parametrize("mhz", [0.0, 1.0, -1.0, 10.0, -10.0])
def test_track_frequency_recovers_detuning(mhz):
    r = track_frequency(P3, detuning=mhz * 1e-3)
    assert abs(r.estimate - mhz * 1e-3) <= 0.5e-3


def test_track_frequency_unbiased_on_grid():
    errs = [track_frequency(P3, detuning=m * 1e-3, points=101).estimate - m * 1e-3 for m in (-10, -5, 0, 5, 10)]
    assert abs(np.mean(errs)) < 0.2e-3


def test_track_frequency_rejects_short_scan():
    with pytest.raises(ValueError):
        track_frequency(P3, t_max=30.0)


def test_idle_phase_accumulates_linearly():
    r = two_d_ramsey(P3, 0.001, [0.0, 100.0], np.linspace(0, 2 * math.pi, 32, endpoint=False))
    assert r.accumulated_phase[1] == pytest.approx(2 * math.pi * 0.001 * 100, rel=0.02)


def test_two_d_ramsey_surface():
    phases = np.linspace(0, 2 * math.pi, 32, endpoint=False)
    flat = two_d_ramsey(P3, 0.0, [0.0, 40.0, 80.0], phases)
    assert np.max(np.abs(flat.p1 - flat.p1[0])) <= 1e-9
    tilted = two_d_ramsey(P3, 0.004, np.linspace(0, 120, 7), phases)
    assert tilted.tilt == pytest.approx(2 * math.pi * 0.004, rel=0.05)
    # the final-axis coordinate has period 2 pi
    wrap = two_d_ramsey(P3, 0.004, [30.0], [0.4, 0.4 + 2 * math.pi])
    assert wrap.p1[0, 0] == pytest.approx(wrap.p1[0, 1], abs=1e-12)


def test_calibrate_z_near_analytic():
    zc = calibrate_z(P3)
    assert zc.amplitude == pytest.approx(analytic_z_pi(6.0), rel=0.02)
    # zeta = 0 is a plain Ramsey pair with no idle: back-to-back pi/2 pulses give a pi rotation
    assert zc.p1[0] > 0.99
    k = int(np.argmin(np.abs(zc.amplitudes - zc.amplitude)))
    assert zc.p1[k] < 0.01


def test_calibrate_z_inverse_duration():
    grid = lambda tz: np.linspace(0.0, 2.5 * 2 * analytic_z_pi(tz), 41)
    a4 = calibrate_z(P3, t_fixed=32.0, tau_z=4.0, amp_grid=grid(4.0)).amplitude
    a8 = calibrate_z(P3, t_fixed=32.0, tau_z=8.0, amp_grid=grid(8.0)).amplitude
    assert abs(a4 * 4.0 / (a8 * 8.0) - 1) <= 0.01


def test_calibrate_z_validation():
    with pytest.raises(ValueError):
        calibrate_z(P3, t_fixed=10.0)
    with pytest.raises(CalibrationError):
        calibrate_z(P3, amp_grid=np.linspace(0, 0.05, 41))


def test_measure_f21():
    est = measure_f21(P3)
    assert est.f21 == pytest.approx(P3.f21, abs=1e-3)
    for w in (3.0, 5.0):
        assert measure_f21(P3, prep_fwhm=w).f21 == pytest.approx(est.f21, abs=1e-4)
    with pytest.raises(CalibrationError):
        measure_f21(P3, drive_offset=-0.2)
    with pytest.raises(ValueError):
        measure_f21(P2)


def test_optimize_beta_nulls_phase_error():
    seed = amplitude_for_angle(math.pi / 2, 6.0)
    r = optimize_beta(P3, amplitude=seed)
    assert r.beta == pytest.approx(ORACLE_BETA_ZERO, abs=1e-4)
    assert 0.3 <= r.beta <= 0.7
    assert abs(math.degrees(r.epsilon)) < 0.1
    e0, e1 = beta_epsilon(P3, 0.0, amplitude=seed), beta_epsilon(P3, 1.0, amplitude=seed)
    assert e0 > 0 > e1
    sweep = [beta_epsilon(P3, b, amplitude=seed) for b in np.linspace(0, 1, 11)]
    assert all(a > b for a, b in zip(sweep, sweep[1:]))
    with pytest.raises(CalibrationError):
        optimize_beta(P3, bracket=(0.7, 1.2))
    with pytest.raises(ValueError):
        optimize_beta(P2)


def test_pipeline_record(record):
    assert abs(record.f10_est - P3.f10) < 1e-6
    assert record.anharmonicity == pytest.approx(P3.anharmonicity, abs=1e-3)
    assert record.z_pi_amplitude == pytest.approx(analytic_z_pi(6.0), rel=0.02)
    assert 0.3 <= record.beta_star <= 0.7
    assert record.pi_residual < 1e-3 and record.half_pi_residual < 1e-6
    back = CalibrationRecord.from_dict(json.loads(record.to_json()))
    assert back == record


def test_pipeline_tracks_injected_offset():
    stages = []
    r = run_pipeline(P3.with_frame(P3.f10 - 0.01), on_stage=stages.append)
    assert stages == ["amplitude", "frequency", "f21", "z", "beta"]
    assert abs(r.f10_est - P3.f10) <= 0.5e-3
    assert r.f21_est == pytest.approx(P3.f21, abs=1e-3)


def test_pipeline_reuse_is_idempotent(record):
    again = run_pipeline(P3, previous=record)
    assert abs(again.pi_amplitude / record.pi_amplitude - 1) <= 1e-4
    assert abs(again.beta_star - record.beta_star) <= 1e-4
