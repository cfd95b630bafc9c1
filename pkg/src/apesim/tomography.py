"""Bloch-vector tomography of simulated states and gate trajectories."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .calibration import CalibrationError, optimize_beta, tune_amplitude
from .pulse_lib import GAUSSIAN_ONLY, HALF_DERIVATIVE, ControlSequence, GateSpec, Shaping, Simultaneous, ZPulseSpec, derivative_scaled, schedule
from .qudit_sim import DEFAULT_CONFIG, PropagatorConfig, QuditParams, basis_state, compose, gate_unitary, sequence_unitary

LEAKAGE_FLAG = 0.01


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def distance(self, other: "BlochVector") -> float:
        return float(np.linalg.norm(self.as_array() - other.as_array()))


def bloch_from_state(psi: np.ndarray) -> BlochVector:
    """Bloch vector of the qubit-subspace part of ``psi`` (renormalized)."""
    c0, c1 = psi[0], psi[1]
    norm = abs(c0) ** 2 + abs(c1) ** 2
    rho01 = np.conj(c0) * c1 / norm
    return BlochVector(float(2 * rho01.real), float(2 * rho01.imag), float((abs(c0) ** 2 - abs(c1) ** 2) / norm))


def state_fidelity(psi: np.ndarray, target) -> float:
    t = np.zeros(psi.shape[0], dtype=complex)
    t[: len(target)] = target
    t /= np.linalg.norm(t)
    return float(abs(np.vdot(t, psi)) ** 2)


@dataclass(frozen=True)
class TomographyPulses:
    """Calibrated analysis rotations X_{pi/2} (axis 0) and Y_{pi/2} (axis pi/2)."""

    x90: GateSpec
    y90: GateSpec

    @classmethod
    def ideal_seed(cls, tau: float = 6.0, shaping: Shaping = HALF_DERIVATIVE) -> "TomographyPulses":
        g = GateSpec(math.pi / 2, tau, 0.0, shaping)
        return cls(g, g.with_axis(math.pi / 2))

    @classmethod
    def calibrated(
        cls, params: QuditParams, tau: float = 6.0, config: PropagatorConfig = DEFAULT_CONFIG, null_phase: bool = True
    ) -> "TomographyPulses":
        """pi/2 pulses with amplitude tuned and, for d >= 3, beta set to null eps.

        A two-level device has no phase error to null, so it gets plain Gaussians.
        """
        shaping = HALF_DERIVATIVE if params.dim >= 3 else GAUSSIAN_ONLY
        if null_phase and params.dim >= 3:
            shaping = derivative_scaled(optimize_beta(params, math.pi / 2, tau, config=config).beta)
        amp = tune_amplitude(params, shaping, math.pi / 2, tau, config)
        g = GateSpec(math.pi / 2, tau, 0.0, shaping, amplitude=amp)
        return cls(g, g.with_axis(math.pi / 2))


@dataclass
class QstResult:
    bloch: BlochVector
    leakage: float  # largest non-qubit population over the measurement branches
    p1: tuple
    flagged: bool


def _prep_unitary(params, prep, config):
    if isinstance(prep, ControlSequence):
        return sequence_unitary(params, prep, config), prep.duration
    return compose(params, list(prep), config)


def qst(
    params: QuditParams,
    prep,
    pulses: TomographyPulses,
    config: PropagatorConfig = DEFAULT_CONFIG,
    psi0: np.ndarray | None = None,
) -> QstResult:
    """Reconstruct the Bloch vector from P1 after {I, X_{pi/2}, Y_{pi/2}}.

    ``prep`` is a list of schedule elements or a ready ControlSequence. P1 is
    the |1> share of the qubit-subspace population.
    """
    U, t_end = _prep_unitary(params, prep, config)
    psi = U @ (basis_state(params.dim) if psi0 is None else psi0)
    branches = [psi]
    for g in (pulses.x90, pulses.y90):
        branches.append(gate_unitary(params, g, config, start=t_end) @ psi)
    p1 = []
    leak = 0.0
    for b in branches:
        q = abs(b[0]) ** 2 + abs(b[1]) ** 2
        p1.append(float(abs(b[1]) ** 2 / q))
        leak = max(leak, 1.0 - q)
    z = 1 - 2 * p1[0]
    y = 1 - 2 * p1[1]
    x = 2 * p1[2] - 1
    flagged = leak > LEAKAGE_FLAG
    if flagged:
        warnings.warn(f"leakage {leak:.3g} at tomography; Bloch vector is ill-defined", RuntimeWarning)
    return QstResult(BlochVector(x, y, z), float(max(leak, 0.0)), tuple(p1), flagged)


@dataclass
class TrajectoryScan:
    values: np.ndarray
    bloch: list
    leakage: list
    states: list = field(repr=False)
    descriptor: str = ""
    direct: list = field(default_factory=list, repr=False)
    tuning: object = None

    def xyz(self) -> np.ndarray:
        return np.array([b.as_array() for b in self.bloch])

    def to_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["s", "x", "y", "z", "leakage"])
            for s, b, lk in zip(self.values, self.bloch, self.leakage):
                w.writerow([repr(float(s)), repr(b.x), repr(b.y), repr(b.z), repr(lk)])


def _scan(params, preps, values, pulses, config, descriptor):
    bloch, leak, states, direct = [], [], [], []
    for prep in preps:
        res = qst(params, prep, pulses, config)
        U, _ = _prep_unitary(params, prep, config)
        psi = U @ basis_state(params.dim)
        bloch.append(res.bloch)
        leak.append(res.leakage)
        states.append(psi)
        direct.append(bloch_from_state(psi))
    return TrajectoryScan(np.asarray(values, dtype=float), bloch, leak, states, descriptor, direct)


def x_rotation_trajectory(
    params: QuditParams,
    shaping: Shaping,
    tau: float = 6.0,
    thetas=None,
    pi_amplitude: float | None = None,
    pulses: TomographyPulses | None = None,
    config: PropagatorConfig = DEFAULT_CONFIG,
) -> TrajectoryScan:
    """Fixed-width X pulse with amplitude ramped through ``thetas``; QST at each."""
    if thetas is None:
        thetas = np.linspace(0.0, math.pi, 21)
    thetas = np.asarray(thetas, dtype=float)
    if thetas.min() < 0 or thetas.max() > math.pi + 1e-12:
        raise ValueError("thetas must lie in [0, pi]")
    if pi_amplitude is None:
        pi_amplitude = tune_amplitude(params, shaping, math.pi, tau, config)
    pulses = pulses or TomographyPulses.calibrated(params, tau, config)
    preps = [[GateSpec(th, tau, 0.0, shaping, amplitude=pi_amplitude * th / math.pi)] if th > 0 else [] for th in thetas]
    return _scan(params, preps, thetas, pulses, config, f"x-rotation {shaping.name} fwhm={tau:g}")


def hadamard_stage(s: float, tau: float, pi_amplitude: float, z_pi_amplitude: float) -> Simultaneous:
    """Simultaneous HD X and Z pulses, each a rotation of s*pi/sqrt(2).

    A positive frequency shift rotates about -z, so the Z pulse is negative
    to make the combined axis (x + z)/sqrt(2).
    """
    k = s / math.sqrt(2)
    return Simultaneous(
        (
            GateSpec(k * math.pi, tau, 0.0, HALF_DERIVATIVE, amplitude=k * pi_amplitude),
            ZPulseSpec(-k * z_pi_amplitude, tau),
        )
    )


@dataclass(frozen=True)
class HadamardTuning:
    pi_amplitude: float  # X peak rate for a pi rotation (rad/ns)
    z_pi_amplitude: float  # Z peak shift for a pi rotation (GHz)
    nominal_fidelity: float
    fidelity: float


def _hadamard_state(params, tau, xa, za, config, s=1.0):
    stages = [hadamard_stage(min(s, 1.0), tau, xa, za)]
    if s > 1:
        stages.append(hadamard_stage(s - 1.0, tau, xa, za))
    return sequence_unitary(params, schedule(stages, anharmonicity=params.delta), config)[:, 0]


def tune_hadamard(
    params: QuditParams,
    tau: float,
    pi_amplitude: float,
    z_pi_amplitude: float,
    config: PropagatorConfig = DEFAULT_CONFIG,
) -> HadamardTuning:
    """Closed-loop touch-up of the X and Z amplitudes for |0> -> |+>.

    Stark shifts and the HD quadrature tilt the simultaneous rotation axis, so
    the separately calibrated amplitudes land near, not on, |+>.
    """
    plus = [1 / math.sqrt(2), 1 / math.sqrt(2)]

    def infid(v):
        return 1.0 - state_fidelity(_hadamard_state(params, tau, pi_amplitude * v[0], z_pi_amplitude * v[1], config), plus)

    nominal = 1.0 - infid((1.0, 1.0))
    res = minimize(infid, [1.0, 1.0], method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-10})
    if res.fun > nominal - 1.0 + 1e-15 and res.fun > 1e-3:
        raise CalibrationError("Hadamard tuning did not improve on the nominal amplitudes")
    return HadamardTuning(float(pi_amplitude * res.x[0]), float(z_pi_amplitude * res.x[1]), nominal, 1.0 - float(res.fun))


def hadamard_trajectory(
    params: QuditParams,
    tau: float = 6.0,
    s_grid=None,
    pi_amplitude: float | None = None,
    z_pi_amplitude: float | None = None,
    pulses: TomographyPulses | None = None,
    config: PropagatorConfig = DEFAULT_CONFIG,
    tune: bool = True,
) -> TrajectoryScan:
    """Two-stage off-equator Hadamard ramp: s in [0, 1] builds H, (1, 2] undoes it.

    With ``tune`` the X and Z amplitudes get a joint closed-loop correction
    (:func:`tune_hadamard`) before the ramp.
    """
    from .calibration import analytic_z_pi

    if s_grid is None:
        s_grid = np.linspace(0.0, 2.0, 21)
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.min() < 0 or s_grid.max() > 2 + 1e-12:
        raise ValueError("s must lie in [0, 2]")
    if pi_amplitude is None:
        pi_amplitude = tune_amplitude(params, HALF_DERIVATIVE, math.pi, tau, config)
    if z_pi_amplitude is None:
        z_pi_amplitude = analytic_z_pi(tau)
    tuning = None
    if tune:
        tuning = tune_hadamard(params, tau, pi_amplitude, z_pi_amplitude, config)
        pi_amplitude, z_pi_amplitude = tuning.pi_amplitude, tuning.z_pi_amplitude
    pulses = pulses or TomographyPulses.calibrated(params, tau, config)
    preps = []
    for s in s_grid:
        if s <= 0:
            preps.append([])
            continue
        stages = [hadamard_stage(min(s, 1.0), tau, pi_amplitude, z_pi_amplitude)]
        if s > 1:
            stages.append(hadamard_stage(s - 1.0, tau, pi_amplitude, z_pi_amplitude))
        preps.append(schedule(stages, anharmonicity=params.delta))
    scan = _scan(params, preps, s_grid, pulses, config, f"hadamard fwhm={tau:g}")
    scan.tuning = tuning
    return scan
