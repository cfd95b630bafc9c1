"""Amplified phase error (APE) fringes and the Ramsey error filter.

Sign convention: a fringe ``p(phi) = m + a cos(phi - phi0)`` whose maximum
moves to ``phi0`` reports an accumulated qubit phase of ``-phi0``. With that
convention the APE shift after ``n`` pseudo-identities is ``+2 n eps`` for the
``Z_eps X Z_eps`` error model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gate_algebra
from .calibration import tune_amplitude
from .fitting import FitError, FringeFit, FringeScan, fit_fringe, phase_grid, sample_probabilities
from .pulse_lib import HALF_DERIVATIVE, GateSpec, Idle, Shaping
from .qudit_sim import DEFAULT_CONFIG, PropagatorConfig, QuditParams, basis_state, compose, gate_unitary, rotate_axis

MIN_VISIBILITY = 0.05


@dataclass
class ApeResult:
    n_list: list
    phases: np.ndarray
    fringes: np.ndarray  # (len(n_list), len(phases))
    fits: list
    shifts: np.ndarray  # accumulated phase relative to n=0, rad
    epsilon_per_gate: float  # slope of shift vs n, halved
    shift_per_pulse: float  # shift(n_max) / total pulse count
    visibility: list
    linearity_residual: float  # max |line residual| / |shift(n_max)|
    label: str = ""
    transition: int = 0

    def summary(self) -> dict:
        return {
            "protocol": self.label,
            "transition": f"{self.transition}-{self.transition + 1}",
            "n_list": list(self.n_list),
            "shifts_rad": [float(s) for s in self.shifts],
            "shifts_deg": [math.degrees(s) for s in self.shifts],
            "epsilon_per_gate_rad": self.epsilon_per_gate,
            "epsilon_per_gate_deg": math.degrees(self.epsilon_per_gate),
            "shift_per_pulse_deg": math.degrees(self.shift_per_pulse),
            "visibility": [float(v) for v in self.visibility],
            "linearity_residual": self.linearity_residual,
        }


def ape_pulses(n: int) -> list[int]:
    """Signs of the pi/2 rotations before the final analysis pulse."""
    return [1] + [1, -1] * n


def _analyse(n_list, phases, fringes, label, transition) -> ApeResult:
    fits = [fit_fringe(FringeScan(phases, row)) for row in fringes]
    vis = [f.amplitude for f in fits]
    order = np.argsort(n_list)
    n_arr = np.asarray(n_list, dtype=float)
    ok = np.array([v >= MIN_VISIBILITY for v in vis])
    if 0 not in n_list or not ok[list(n_list).index(0)]:
        raise FitError("APE baseline (n=0) fringe missing or without contrast")
    if ok.sum() < 1:
        raise FitError("no APE fringe above the visibility floor")
    offsets = np.array([f.phase_offset for f in fits])
    acc = np.full(len(n_list), np.nan)
    good = [i for i in order if ok[i]]
    acc[good] = -np.unwrap(offsets[good])
    acc -= acc[list(n_list).index(0)]
    shifts = acc
    valid = ~np.isnan(shifts)
    if valid.sum() >= 2:
        slope, icpt = np.polyfit(n_arr[valid], shifts[valid], 1)
        resid = shifts[valid] - (slope * n_arr[valid] + icpt)
    else:
        slope, resid = 0.0, np.zeros(1)
    i_max = int(np.nanargmax(np.where(valid, n_arr, -1)))
    n_max = n_arr[i_max]
    top = abs(shifts[i_max])
    lin = float(np.max(np.abs(resid)) / top) if top > 0 else 0.0
    per_pulse = float(shifts[i_max] / (2 * n_max + 1)) if n_max > 0 else 0.0
    return ApeResult(
        list(n_list), phases, fringes, fits, shifts, float(slope / 2), per_pulse, vis, lin, label, transition
    )


def run_ape(
    params: QuditParams,
    shaping: Shaping,
    tau: float = 6.0,
    n_list: Sequence[int] = (0, 1, 3, 5),
    phi_points: int = 64,
    transition: int = 0,
    config: PropagatorConfig = DEFAULT_CONFIG,
    amplitude: float | None = None,
    prep_amplitude: float | None = None,
    calibrate: bool = True,
    gap: float = 0.0,
    t2_decay: float | None = None,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> ApeResult:
    """Simulated APE scan on ``transition`` (0 for 0<->1, 1 for 1<->2).

    For 1<->2 the qudit is first moved to |1> by a half-derivative pi pulse and
    the APE pulses are driven at f21. ``amplitude`` is the pi/2 peak rate; by
    default it is calibrated with :func:`tune_amplitude`.
    """
    if 0 not in n_list:
        raise ValueError("n_list must contain 0")
    if phi_points < 16:
        raise ValueError("need at least 16 phase points")
    if transition and params.dim < transition + 2:
        raise ValueError("qudit too small for this transition")
    detuning = transition * params.anharmonicity
    if amplitude is None:
        amplitude = (
            tune_amplitude(params, shaping, math.pi / 2, tau, config, transition)
            if calibrate
            else GateSpec(math.pi / 2, tau, transition=transition).peak_amplitude()
        )
    prep = []
    if transition == 1:
        if prep_amplitude is None:
            prep_amplitude = tune_amplitude(params, HALF_DERIVATIVE, math.pi, tau, config) if calibrate else None
        prep = [GateSpec(math.pi, tau, 0.0, HALF_DERIVATIVE, amplitude=prep_amplitude)]

    def half(sign, axis=0.0):
        return GateSpec(sign * math.pi / 2, tau, axis, shaping, transition, detuning, sign * amplitude)

    phases = phase_grid(phi_points)
    upper = transition + 1
    psi0 = basis_state(params.dim, 0)
    fringes = np.empty((len(n_list), phases.size))
    for i, n in enumerate(n_list):
        body = prep + [half(s) for s in ape_pulses(n)]
        U, t_end = compose(params, body, config, gap=gap)
        psi = U @ psi0
        if gap:
            from .qudit_sim import idle_unitary

            psi = idle_unitary(params, gap) @ psi
            t_end += gap
        base = gate_unitary(params, half(1), config, start=t_end)
        for j, phi in enumerate(phases):
            fringes[i, j] = abs((rotate_axis(base, phi) @ psi)[upper]) ** 2
        if t2_decay:
            total = t_end + half(1).window
            fringes[i] = 0.5 + (fringes[i] - 0.5) * math.exp(-total / t2_decay)
    if shots:
        fringes = sample_probabilities(fringes, shots, rng or np.random.default_rng(0))
    return _analyse(list(n_list), phases, fringes, shaping.name, transition)


def run_ape_analytic(
    eps: float,
    n_list: Sequence[int] = (0, 1, 3, 5),
    phi_points: int = 64,
) -> ApeResult:
    """APE on the closed-form corrupted pi/2 gates (no time evolution)."""
    phases = phase_grid(phi_points)
    fringes = np.empty((len(n_list), phases.size))
    psi0 = np.array([1.0, 0.0], dtype=complex)
    final = gate_algebra.corrupted_rotation(math.pi / 2, eps)
    for i, n in enumerate(n_list):
        psi = psi0
        for s in ape_pulses(n):
            psi = gate_algebra.corrupted_rotation(s * math.pi / 2, eps) @ psi
        for j, phi in enumerate(phases):
            fringes[i, j] = abs((rotate_axis(final, phi) @ psi)[1]) ** 2
    return _analyse(list(n_list), phases, fringes, f"analytic eps={eps:g}", 0)


@dataclass
class RefPoint:
    fwhm: float
    p2_error: float  # per-pulse leakage: half the delay-averaged two-pulse P2
    p2_min: float
    p2_max: float
    delays: np.ndarray = field(repr=False)
    p2: np.ndarray = field(repr=False)


def ramsey_error_filter(
    params: QuditParams,
    shaping: Shaping,
    fwhms: Sequence[float],
    delays=None,
    config: PropagatorConfig = DEFAULT_CONFIG,
    calibrate: bool = True,
) -> list[RefPoint]:
    """Two calibrated pi pulses separated by a scanned delay, |2> read out.

    The two leakage amplitudes interfere at the anharmonic frequency, so P2
    oscillates between (a - b)^2 and (a + b)^2; its delay average is
    |a|^2 + |b|^2, twice the per-pulse leakage.
    """
    if params.dim < 3:
        raise ValueError("leakage needs at least three levels")
    if delays is None:
        period = 1.0 / abs(params.anharmonicity)
        delays = np.linspace(0.0, 4 * period, 161)
    delays = np.asarray(delays, dtype=float)
    out = []
    for tau in fwhms:
        amp = tune_amplitude(params, shaping, math.pi, tau, config) if calibrate else None
        g = GateSpec(math.pi, tau, 0.0, shaping, amplitude=amp)
        p2 = np.array([abs(compose(params, [g, Idle(float(t)), g], config)[0][2, 0]) ** 2 for t in delays])
        try:
            mean = fit_fringe(FringeScan(delays, p2, "time")).mean
        except FitError:
            mean = float(np.mean(p2))
        out.append(RefPoint(float(tau), float(mean / 2), float(p2.min()), float(p2.max()), delays, p2))
    return out
