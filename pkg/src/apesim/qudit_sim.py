"""Rotating-frame dynamics of a weakly anharmonic d-level ladder.

The Hamiltonian (rad/ns) in the frame rotating at ``f_frame``::

    H = sum_n 2 pi [(E_n - n f_frame) + n z(t)] |n><n|
        + sum_n sqrt(n+1)/2 [(x + i y) |n+1><n| + h.c.]

``x + i y`` is the complex drive; with this sign a pulse of axis ``phi``
produces ``gate_algebra.rotation(phi, theta)`` on the 0-1 block and the
quadrature ``-beta * dX/dt / Delta`` removes the phase error near beta=1/2.
Propagation is the exponential midpoint rule with exact small-matrix
exponentials, so every step is unitary to rounding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import gate_algebra
from .pulse_lib import ControlSequence, GateSpec, Idle, Shaping, schedule


@dataclass(frozen=True)
class QuditParams:
    """Device ladder. Frequencies in GHz, ``anharmonicity`` is Delta/2pi (negative)."""

    dim: int = 3
    f10: float = 6.0
    anharmonicity: float = -0.2
    f_frame: float | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be at least 2")

    @property
    def frame(self) -> float:
        return self.f10 if self.f_frame is None else self.f_frame

    @property
    def delta(self) -> float:
        """Anharmonicity in rad/ns."""
        return 2 * math.pi * self.anharmonicity

    @property
    def f21(self) -> float:
        return self.f10 + self.anharmonicity

    def level_frequencies(self) -> np.ndarray:
        n = np.arange(self.dim)
        return n * self.f10 + n * (n - 1) / 2 * self.anharmonicity

    def frame_energies(self) -> np.ndarray:
        n = np.arange(self.dim)
        return 2 * math.pi * (self.level_frequencies() - n * self.frame)

    def with_frame(self, f_frame: float | None) -> "QuditParams":
        return QuditParams(self.dim, self.f10, self.anharmonicity, f_frame)


@dataclass(frozen=True)
class PropagatorConfig:
    dt: float = 0.005
    rotating_wave: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


DEFAULT_CONFIG = PropagatorConfig()


def _raising(dim: int) -> np.ndarray:
    r = np.zeros((dim, dim), dtype=complex)
    for n in range(dim - 1):
        r[n + 1, n] = math.sqrt(n + 1) / 2
    return r


def _hamiltonians(params: QuditParams, seq: ControlSequence, t, rotating_wave: bool = True) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x, y, z = seq.channels(t)
    d = params.dim
    n = np.arange(d)
    H = np.zeros((t.size, d, d), dtype=complex)
    diag = params.frame_energies()[None, :] + 2 * math.pi * n[None, :] * z[:, None]
    H[:, n, n] = diag
    R = _raising(d)
    c = (x + 1j * y)[:, None, None]
    up = c * R
    if not rotating_wave:
        w = 2 * math.pi * params.frame
        up = up + np.conj(c) * np.exp(2j * w * t)[:, None, None] * R
    H += up + np.conj(np.swapaxes(up, 1, 2))
    return H


def hamiltonian(params: QuditParams, seq: ControlSequence, t: float, config: PropagatorConfig = DEFAULT_CONFIG):
    """d x d Hermitian matrix (rad/ns) at time ``t``."""
    if t < -1e-12 or t > seq.duration + 1e-12:
        raise ValueError(f"t={t} outside [0, {seq.duration}]")
    return _hamiltonians(params, seq, [t], config.rotating_wave)[0]


def _time_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    n = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    edges = t0 + dt * np.arange(n + 1)
    edges[-1] = t1
    return edges


def _step_unitaries(H: np.ndarray, dts: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(H)
    phases = np.exp(-1j * w * dts[:, None])
    return (v * phases[:, None, :]) @ np.conj(np.swapaxes(v, 1, 2))


def _chain(us: np.ndarray) -> np.ndarray:
    """Ordered product ``us[-1] @ ... @ us[0]`` by pairwise reduction."""
    while len(us) > 1:
        tail = us[-1:] if len(us) % 2 else None
        body = us[:-1] if tail is not None else us
        us = body[1::2] @ body[0::2]
        if tail is not None:
            us = np.concatenate([us, tail])
    return us[0]


def idle_unitary(params: QuditParams, duration: float) -> np.ndarray:
    return np.diag(np.exp(-1j * params.frame_energies() * duration))


def _active_intervals(seq: ControlSequence) -> list[tuple[float, float]]:
    spans = sorted((max(p.start, 0.0), min(p.stop, seq.duration)) for p in seq.pulses)
    merged: list[list[float]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1] + 1e-12:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged if b > a]


def segment_unitary(params, seq, t0, t1, config=DEFAULT_CONFIG) -> np.ndarray:
    edges = _time_grid(t0, t1, config.dt)
    mids = 0.5 * (edges[1:] + edges[:-1])
    H = _hamiltonians(params, seq, mids, config.rotating_wave)
    return _chain(_step_unitaries(H, np.diff(edges)))


def sequence_unitary(params: QuditParams, seq: ControlSequence, config: PropagatorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Total propagator; stretches without pulses use the exact idle exponential.

    With the RWA on, an empty stretch has a constant diagonal Hamiltonian, so
    skipping the time grid there is exact.
    """
    U = np.eye(params.dim, dtype=complex)
    if not config.rotating_wave:
        return segment_unitary(params, seq, 0.0, seq.duration, config) if seq.duration > 0 else U
    t = 0.0
    for a, b in _active_intervals(seq):
        if a > t:
            U = idle_unitary(params, a - t) @ U
        U = segment_unitary(params, seq, a, b, config) @ U
        t = b
    if seq.duration > t:
        U = idle_unitary(params, seq.duration - t) @ U
    return U


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), dim)
    unitary: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.states) ** 2

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path, amplitudes: bool = False) -> None:
        d = self.states.shape[1]
        header = ["t_ns"] + [f"P{k}" for k in range(d)]
        if amplitudes:
            for k in range(d):
                header += [f"re{k}", f"im{k}"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, psi in zip(self.times, self.states):
                row = [repr(float(t))] + [repr(float(p)) for p in np.abs(psi) ** 2]
                if amplitudes:
                    for a in psi:
                        row += [repr(float(a.real)), repr(float(a.imag))]
                w.writerow(row)


def basis_state(dim: int, k: int = 0) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[k] = 1.0
    return psi


def propagate(
    params: QuditParams,
    seq: ControlSequence,
    psi0: np.ndarray | None = None,
    config: PropagatorConfig = DEFAULT_CONFIG,
) -> Trajectory:
    """Step the state on a uniform ``dt`` grid and record it at every edge."""
    psi = basis_state(params.dim) if psi0 is None else np.asarray(psi0, dtype=complex)
    if psi.shape != (params.dim,):
        raise ValueError(f"state has shape {psi.shape}, expected ({params.dim},)")
    if abs(np.linalg.norm(psi) - 1) > 1e-9:
        raise ValueError("initial state is not normalized")
    if seq.duration <= 0:
        return Trajectory(np.array([0.0]), psi[None, :].copy(), np.eye(params.dim, dtype=complex))
    edges = _time_grid(0.0, seq.duration, config.dt)
    mids = 0.5 * (edges[1:] + edges[:-1])
    steps = _step_unitaries(_hamiltonians(params, seq, mids, config.rotating_wave), np.diff(edges))
    states = np.empty((edges.size, params.dim), dtype=complex)
    states[0] = psi
    for k, u in enumerate(steps):
        psi = u @ psi
        states[k + 1] = psi
    return Trajectory(edges, states, _chain(steps))


def frame_rotation(dim: int, angle: float) -> np.ndarray:
    """diag(exp(i n angle)); conjugating by it rotates every drive axis by ``angle``."""
    return np.diag(np.exp(1j * np.arange(dim) * angle))


def rotate_axis(U: np.ndarray, angle: float) -> np.ndarray:
    R = frame_rotation(U.shape[0], angle)
    return R @ U @ R.conj().T


@lru_cache(maxsize=4096)
def _gate_unitary_cached(params: QuditParams, spec: GateSpec, config: PropagatorConfig) -> np.ndarray:
    seq = schedule([spec], anharmonicity=params.delta)
    U = sequence_unitary(params, seq, config)
    U.setflags(write=False)
    return U


def gate_unitary(
    params: QuditParams,
    spec,
    config: PropagatorConfig = DEFAULT_CONFIG,
    start: float = 0.0,
) -> np.ndarray:
    """Propagator of a single element started at ``start`` ns.

    Only the carrier phase depends on the start time, so the cached axis-0,
    t=0 propagator is rotated instead of re-integrated.
    """
    if not isinstance(spec, GateSpec):
        seq = schedule([spec], anharmonicity=params.delta)
        return sequence_unitary(params, seq, config)
    base = _gate_unitary_cached(params, spec.with_axis(0.0), config)
    angle = spec.axis_phi - 2 * math.pi * spec.drive_detuning * start
    return rotate_axis(np.array(base), angle) if angle else np.array(base)


def compose(params: QuditParams, elements: Iterable, config: PropagatorConfig = DEFAULT_CONFIG, gap: float = 0.0):
    """Propagator of abutting elements built from cached single-element propagators.

    Equivalent to ``sequence_unitary(schedule(elements, gap))`` whenever
    windows do not overlap; returns ``(U, duration)``.
    """
    U = np.eye(params.dim, dtype=complex)
    t = 0.0
    first = True
    for el in elements:
        if not first and gap:
            U = idle_unitary(params, gap) @ U
            t += gap
        first = False
        if isinstance(el, Idle):
            U = idle_unitary(params, el.duration) @ U
            t += el.duration
            continue
        U = gate_unitary(params, el, config, start=t) @ U
        t += el.window
    return U, t


def to_drive_frame(U: np.ndarray, drive_detuning: float, duration: float) -> np.ndarray:
    """Re-express a propagator over [0, duration] in the frame of a detuned carrier."""
    return frame_rotation(U.shape[0], 2 * math.pi * drive_detuning * duration) @ U


@dataclass
class EffectiveGate:
    full_unitary: np.ndarray
    raw_block: np.ndarray
    qubit_block: np.ndarray
    leakage: float
    epsilon: float | None
    residual: float | None
    levels: tuple = (0, 1)


def polar_unitary(block: np.ndarray) -> np.ndarray:
    """Nearest unitary (polar factor) of a square block."""
    w, _, vh = np.linalg.svd(block)
    return w @ vh


def effective_gate(
    params: QuditParams,
    seq: ControlSequence,
    config: PropagatorConfig = DEFAULT_CONFIG,
    transition: int = 0,
    drive_detuning: float = 0.0,
    theta: float = math.pi / 2,
    extract: bool = True,
    strict: bool = True,
) -> EffectiveGate:
    """Full propagator, 2x2 block on (transition, transition+1), leakage and eps.

    ``drive_detuning`` moves the block into the carrier frame before the phase
    is read (needed for 1<->2 gates driven at f21 from an f10 frame).
    """
    U = sequence_unitary(params, seq, config)
    return effective_gate_from_unitary(U, seq.duration, transition, drive_detuning, theta, extract, strict)


def effective_gate_from_unitary(U, duration, transition=0, drive_detuning=0.0, theta=math.pi / 2, extract=True, strict=True):
    if drive_detuning:
        U = to_drive_frame(U, drive_detuning, duration)
    lv = (transition, transition + 1)
    block = U[np.ix_(lv, lv)]
    leakage = 1.0 - float(np.sum(np.abs(block) ** 2)) / 2.0
    polar = polar_unitary(block)
    eps = res = None
    if extract:
        est = gate_algebra.extract_epsilon(polar, theta=theta, strict=strict)
        eps, res = est.epsilon, est.residual
    return EffectiveGate(U, block, polar, max(0.0, leakage), eps, res, lv)


def single_gate_epsilon(
    params: QuditParams,
    theta: float,
    fwhm: float,
    shaping: Shaping,
    config: PropagatorConfig = DEFAULT_CONFIG,
    amplitude: float | None = None,
    transition: int = 0,
) -> EffectiveGate:
    """Effective gate of one isolated rotation (resonant with its transition)."""
    detuning = transition * params.anharmonicity
    spec = GateSpec(theta, fwhm, 0.0, shaping, transition, detuning, amplitude)
    U = gate_unitary(params, spec, config)
    return effective_gate_from_unitary(U, spec.window, transition, detuning, theta)


def leakage_scan(
    params: QuditParams,
    shaping: Shaping,
    theta: float,
    fwhms: Sequence[float],
    config: PropagatorConfig = DEFAULT_CONFIG,
    calibrate: bool = True,
) -> list[tuple[float, float]]:
    """Final |2> population after one calibrated rotation from |0>, per FWHM."""
    if params.dim < 3:
        raise ValueError("leakage needs at least three levels")
    from .calibration import tune_amplitude

    out = []
    for tau in fwhms:
        amp = tune_amplitude(params, shaping, theta, tau, config) if calibrate else None
        spec = GateSpec(theta, tau, 0.0, shaping, amplitude=amp)
        psi = gate_unitary(params, spec, config)[:, 0]
        out.append((float(tau), float(abs(psi[2]) ** 2)))
    return out
