"""Calibration ladder: amplitude, qubit frequency, f21, Z pulse and beta.

Detunings follow ``detuning = f_qubit - f_drive`` (GHz). Phases are in
radians: a carrier ``detuning`` off for ``t`` ns accumulates
``2 pi * detuning * t``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import bisect

from .fitting import FitError, FringeFit, FringeScan, fit_fringe, phase_grid
from .pulse_lib import (
    GAUSS_AREA,
    GAUSSIAN_ONLY,
    HALF_DERIVATIVE,
    TRUNCATED_FRACTION,
    GateSpec,
    Idle,
    Overlay,
    Shaping,
    ZPulseSpec,
    amplitude_for_angle,
    derivative_scaled,
    schedule,
)
from .qudit_sim import (
    DEFAULT_CONFIG,
    PropagatorConfig,
    QuditParams,
    basis_state,
    compose,
    gate_unitary,
    sequence_unitary,
    single_gate_epsilon,
)

INV_PHI = (math.sqrt(5) - 1) / 2
#: carrier advance rate of the final Ramsey pulse used for frequency tracking
PHASE_ADVANCE_GHZ = 0.050
AMPLITUDE_BRACKET = 0.2  # +/- fraction around the area-theorem seed
BETA_BRACKET = (0.0, 1.5)
MIN_FRINGE_CONTRAST = 0.05


class CalibrationError(RuntimeError):
    """A calibration search left its bracket or could not converge."""


def golden_section(f, a: float, b: float, xtol: float = 1e-12, max_iter: int = 500):
    """Minimize a unimodal ``f`` on [a, b]; returns ``(x, f(x))``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _gate(theta, tau, shaping, amplitude, transition=0, params=None, axis_phi=0.0):
    detuning = transition * params.anharmonicity if params is not None and transition else 0.0
    return GateSpec(theta, tau, axis_phi, shaping, transition, detuning, amplitude)


def rotation_populations(params, shaping, theta, tau, amplitude, config=DEFAULT_CONFIG, transition=0):
    """State after one rotation on ``transition`` starting from its lower level."""
    spec = _gate(theta, tau, shaping, amplitude, transition, params)
    return gate_unitary(params, spec, config)[:, transition]


def tune_amplitude(
    params: QuditParams,
    shaping: Shaping,
    theta: float,
    tau: float,
    config: PropagatorConfig = DEFAULT_CONFIG,
    transition: int = 0,
    seed: float | None = None,
    bracket: float = AMPLITUDE_BRACKET,
) -> float:
    """Peak amplitude (rad/ns) of a calibrated ``theta`` rotation.

    For |theta| = pi the upper-level population is maximized; otherwise it is
    driven to sin^2(theta/2). Golden-section search around ``seed``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if seed is None:
        seed = amplitude_for_angle(theta, tau) / math.sqrt(transition + 1)
    upper = transition + 1
    full = math.isclose(abs(theta), math.pi)
    target = math.sin(theta / 2) ** 2

    def cost(a):
        psi = rotation_populations(params, shaping, theta, tau, a, config, transition)
        pu = abs(psi[upper]) ** 2
        return -pu if full else abs(pu - target)

    lo, hi = sorted((seed * (1 - bracket), seed * (1 + bracket)))
    amp, _ = golden_section(cost, lo, hi)
    edge = 1e-6 * abs(hi - lo)
    if amp - lo < edge or hi - amp < edge:
        raise CalibrationError(f"amplitude search hit the bracket edge at {amp:.6g} rad/ns")
    if not full:
        psi = rotation_populations(params, shaping, theta, tau, amp, config, transition)
        coherence = np.conj(psi[transition]) * psi[upper]
        # a positive rotation about +x sends |lower> toward -y
        if np.sign(coherence.imag) != -np.sign(theta):
            raise CalibrationError("calibrated rotation has the wrong Bloch-y sign")
    return float(amp)


def half_pi_check(params, shaping, tau, pi_amp, half_amp, config=DEFAULT_CONFIG) -> float:
    """|P1(two pi/2 pulses) - P1(one pi pulse)| relative to the latter."""
    half = _gate(math.pi / 2, tau, shaping, half_amp)
    U2, _ = compose(params, [half, half], config)
    p_two = abs(U2[1, 0]) ** 2
    p_one = abs(rotation_populations(params, shaping, math.pi, tau, pi_amp, config)[1]) ** 2
    return float(abs(p_two - p_one) / p_one)


@dataclass
class RamseyResult:
    delays: np.ndarray
    p1: np.ndarray
    fit: FringeFit
    estimate: float


def _ramsey_p(params, first, last, delays, phases, config, measure=1, prep=None, initial=0):
    """Upper-level population for ``[prep] first - idle(t) - last(axis)`` per delay."""
    out = np.empty(len(delays))
    psi0 = basis_state(params.dim, initial)
    for k, (t, phi) in enumerate(zip(delays, phases)):
        elements = ([prep] if prep is not None else []) + [first, Idle(float(t)), last.with_axis(last.axis_phi + phi)]
        U, _ = compose(params, elements, config)
        out[k] = abs((U @ psi0)[measure]) ** 2
    return out


def track_frequency(
    params: QuditParams,
    detuning: float | None = None,
    t_max: float = 200.0,
    points: int = 201,
    tau: float = 6.0,
    shaping: Shaping = HALF_DERIVATIVE,
    amplitude: float | None = None,
    advance: float = PHASE_ADVANCE_GHZ,
    config: PropagatorConfig = DEFAULT_CONFIG,
) -> RamseyResult:
    """Estimate ``f10 - f_drive`` from a Ramsey fringe with an advancing final axis.

    ``detuning`` places the carrier at ``f10 - detuning``; when omitted the
    carrier sits at ``params.frame``.
    """
    if t_max < 2 / advance:
        raise ValueError(f"scan of {t_max} ns is shorter than two {advance * 1e3:g} MHz periods")
    if detuning is not None:
        params = params.with_frame(params.f10 - detuning)
    half = _gate(math.pi / 2, tau, shaping, amplitude)
    delays = np.linspace(0.0, t_max, points)
    p1 = _ramsey_p(params, half, half, delays, 2 * math.pi * advance * delays, config)
    fit = fit_fringe(FringeScan(delays, p1, "time"))
    return RamseyResult(delays, p1, fit, fit.frequency - advance)


@dataclass
class Ramsey2D:
    delays: np.ndarray
    phases: np.ndarray
    p1: np.ndarray  # (len(delays), len(phases))
    accumulated_phase: np.ndarray | None
    tilt: float | None  # d(accumulated phase)/dt, rad/ns


def two_d_ramsey(
    params: QuditParams,
    detuning: float,
    delays,
    phases,
    tau: float = 6.0,
    shaping: Shaping = HALF_DERIVATIVE,
    amplitude: float | None = None,
    config: PropagatorConfig = DEFAULT_CONFIG,
) -> Ramsey2D:
    """P1 versus separation and final-pulse axis with the carrier ``detuning`` off.

    The fringe maximum sits at ``phi = -accumulated phase``; the accumulated
    phase grows as ``2 pi detuning t`` so its slope is the tilt.
    """
    delays = np.asarray(delays, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if delays.size == 0 or phases.size == 0:
        raise ValueError("grids must be non-empty")
    p = params.with_frame(params.f10 - detuning)
    half = _gate(math.pi / 2, tau, shaping, amplitude)
    U_half = gate_unitary(p, half, config)
    surface = np.empty((delays.size, phases.size))
    from .qudit_sim import idle_unitary, rotate_axis

    for i, t in enumerate(delays):
        psi = idle_unitary(p, t) @ U_half[:, 0]
        for j, phi in enumerate(phases):
            surface[i, j] = abs((rotate_axis(U_half, phi) @ psi)[1]) ** 2
    acc = tilt = None
    try:
        offsets = np.array([fit_fringe(FringeScan(phases, row)).phase_offset for row in surface])
    except FitError:
        offsets = None
    if offsets is not None:
        acc = -np.unwrap(offsets)
        acc -= acc[0]
        if delays.size > 1:
            tilt = float(np.polyfit(delays, acc, 1)[0])
    return Ramsey2D(delays, phases, surface, acc, tilt)


def analytic_z_pi(tau_z: float) -> float:
    """Z amplitude (GHz) whose truncated Gaussian area gives a pi phase."""
    return 1.0 / (2.0 * tau_z * GAUSS_AREA * TRUNCATED_FRACTION)


@dataclass
class ZCalibration:
    amplitude: float
    analytic: float
    amplitudes: np.ndarray
    p1: np.ndarray
    fit: FringeFit


def calibrate_z(
    params: QuditParams,
    t_fixed: float = 24.0,
    tau_z: float = 6.0,
    amp_grid=None,
    tau: float = 6.0,
    half_amplitude: float | None = None,
    shaping: Shaping = HALF_DERIVATIVE,
    config: PropagatorConfig = DEFAULT_CONFIG,
) -> ZCalibration:
    """Z amplitude giving a pi phase between two pi/2 pulses ``t_fixed`` ns apart."""
    window = 4 * tau
    if t_fixed < window:
        raise ValueError("t_fixed shorter than one pulse window")
    if amp_grid is None:
        amp_grid = np.linspace(0.0, 2.5 * 2 * analytic_z_pi(tau_z), 101)
    amp_grid = np.asarray(amp_grid, dtype=float)
    half = _gate(math.pi / 2, tau, shaping, half_amplitude)
    center = window / 2 + t_fixed / 2
    p1 = np.empty(amp_grid.size)
    for k, zeta in enumerate(amp_grid):
        seq = schedule(
            [half, Idle(t_fixed - window), half, Overlay(ZPulseSpec(float(zeta), tau_z), center)],
            anharmonicity=params.delta,
        )
        p1[k] = abs(sequence_unitary(params, seq, config)[1, 0]) ** 2
    try:
        fit = fit_fringe(FringeScan(amp_grid, p1, "time"))
    except FitError as exc:
        raise CalibrationError(f"Z amplitude scan has no usable fringe: {exc}") from exc
    # P1 = m + A cos(2 pi f zeta - phi0); the first minimum is a pi z-rotation
    zeta_pi = (math.pi + fit.phase_offset) / (2 * math.pi * fit.frequency)
    if not amp_grid[0] <= zeta_pi <= amp_grid[-1]:
        raise CalibrationError(f"no P1 minimum inside the Z amplitude grid (fit gives {zeta_pi:.4g} GHz)")
    return ZCalibration(float(zeta_pi), analytic_z_pi(tau_z), amp_grid, p1, fit)


@dataclass
class F21Estimate:
    f21: float
    detuning: float  # f21 - f_drive
    fit: FringeFit
    delays: np.ndarray
    p2: np.ndarray


def measure_f21(
    params: QuditParams,
    drive_offset: float = -0.195,
    delays=None,
    prep_fwhm: float = 4.0,
    tau: float = 6.0,
    config: PropagatorConfig = DEFAULT_CONFIG,
) -> F21Estimate:
    """Ramsey fringe on 1<->2 with the carrier at ``frame + drive_offset``.

    |1> is prepared by a short plain Gaussian pi pulse. The second pi/2 pulse
    is about the 90 degree axis so the fringe phase carries the sign of the
    detuning.
    """
    if params.dim < 3:
        raise ValueError("f21 needs at least three levels")
    if delays is None:
        delays = np.linspace(0.0, 600.0, 301)
    delays = np.asarray(delays, dtype=float)
    prep = GateSpec(math.pi, prep_fwhm, 0.0, GAUSSIAN_ONLY)
    half = GateSpec(math.pi / 2, tau, 0.0, GAUSSIAN_ONLY, 1, drive_offset)
    last = half.with_axis(math.pi / 2)
    p2 = _ramsey_p(params, half, last, delays, np.zeros_like(delays), config, measure=2, prep=prep)
    fit = fit_fringe(FringeScan(delays, p2, "time"))
    if fit.amplitude < MIN_FRINGE_CONTRAST:
        raise CalibrationError(
            f"no 1-2 Ramsey oscillation (contrast {fit.amplitude:.2g}); is the carrier on resonance with f21?"
        )
    # P2 ~ 1/2 (1 - sin(2 pi nu t)): offset -pi/2 for nu > 0, +pi/2 for nu < 0
    sign = -1.0 if math.sin(fit.phase_offset) > 0 else 1.0
    nu = sign * fit.frequency
    return F21Estimate(params.frame + drive_offset + nu, nu, fit, delays, p2)


@dataclass
class BetaResult:
    beta: float
    epsilon: float
    bracket: tuple


def beta_epsilon(params, beta, theta=math.pi / 2, tau=6.0, amplitude=None, config=DEFAULT_CONFIG) -> float:
    return single_gate_epsilon(params, theta, tau, derivative_scaled(beta), config, amplitude).epsilon


def optimize_beta(
    params: QuditParams,
    theta: float = math.pi / 2,
    tau: float = 6.0,
    bracket=BETA_BRACKET,
    amplitude: float | None = None,
    config: PropagatorConfig = DEFAULT_CONFIG,
    xtol: float = 1e-7,
) -> BetaResult:
    """Derivative scale that nulls the per-gate phase error (bisection on its sign)."""
    if params.dim < 3:
        raise ValueError("phase error needs at least three levels")
    lo, hi = bracket
    f = lambda b: beta_epsilon(params, b, theta, tau, amplitude, config)
    f_lo, f_hi = f(lo), f(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise CalibrationError(f"phase error does not change sign on beta in [{lo}, {hi}]")
    beta = bisect(f, lo, hi, xtol=xtol)
    return BetaResult(float(beta), float(f(beta)), (lo, hi))


@dataclass(frozen=True)
class CalibrationRecord:
    """Outcome of the calibration chain; every value carries its own residual."""

    fwhm: float
    pi_amplitude: float
    pi_residual: float
    half_pi_amplitude: float
    half_pi_residual: float
    half_pi_check: float
    f10_est: float
    f10_residual: float
    f21_est: float
    f21_residual: float
    z_pi_amplitude: float
    z_residual: float
    beta_star: float
    beta_residual: float
    config_hash: str = ""

    @property
    def anharmonicity(self) -> float:
        return self.f21_est - self.f10_est

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationRecord":
        return cls(**data)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_pipeline(
    params: QuditParams,
    tau: float = 6.0,
    config: PropagatorConfig = DEFAULT_CONFIG,
    f21_offset: float = -0.195,
    t_fixed: float = 24.0,
    previous: CalibrationRecord | None = None,
    on_stage=None,
) -> CalibrationRecord:
    """amplitude -> frequency -> f21 -> Z -> beta, in that order.

    ``params.frame`` is the starting carrier frequency; the record's
    ``f10_est`` is where the carrier should sit afterwards.
    """
    stage = on_stage or (lambda name: None)
    seed_pi = previous.pi_amplitude if previous else None
    seed_half = previous.half_pi_amplitude if previous else None

    stage("amplitude")
    pi_amp = tune_amplitude(params, HALF_DERIVATIVE, math.pi, tau, config, seed=seed_pi)
    half_amp = tune_amplitude(params, HALF_DERIVATIVE, math.pi / 2, tau, config, seed=seed_half)

    stage("frequency")
    ramsey = track_frequency(params, tau=tau, amplitude=half_amp, config=config)
    f10_est = params.frame + ramsey.estimate
    tuned = params.with_frame(f10_est)
    if abs(ramsey.estimate) > 1e-9:
        pi_amp = tune_amplitude(tuned, HALF_DERIVATIVE, math.pi, tau, config, seed=pi_amp)
        half_amp = tune_amplitude(tuned, HALF_DERIVATIVE, math.pi / 2, tau, config, seed=half_amp)
    pi_res = 1.0 - abs(rotation_populations(tuned, HALF_DERIVATIVE, math.pi, tau, pi_amp, config)[1]) ** 2
    half_res = abs(abs(rotation_populations(tuned, HALF_DERIVATIVE, math.pi / 2, tau, half_amp, config)[1]) ** 2 - 0.5)
    check = half_pi_check(tuned, HALF_DERIVATIVE, tau, pi_amp, half_amp, config)

    stage("f21")
    f21 = measure_f21(tuned, drive_offset=f21_offset, tau=tau, config=config)

    stage("z")
    zc = calibrate_z(tuned, t_fixed=t_fixed, tau_z=tau, tau=tau, half_amplitude=half_amp, config=config)

    stage("beta")
    br = optimize_beta(tuned, math.pi / 2, tau, amplitude=half_amp, config=config)

    return CalibrationRecord(
        fwhm=tau,
        pi_amplitude=pi_amp,
        pi_residual=float(pi_res),
        half_pi_amplitude=half_amp,
        half_pi_residual=float(half_res),
        half_pi_check=check,
        f10_est=float(f10_est),
        f10_residual=ramsey.fit.rms_residual,
        f21_est=f21.f21,
        f21_residual=f21.fit.rms_residual,
        z_pi_amplitude=zc.amplitude,
        z_residual=zc.fit.rms_residual,
        beta_star=br.beta,
        beta_residual=abs(br.epsilon),
    )
