"""Gaussian envelopes, derivative quadratures and channel scheduling.

Units: drive channels ``x``/``y`` carry Rabi angular rates in rad/ns, the
``z`` channel carries a frequency shift of the 0-1 transition in GHz. Times
are in ns. Every Gaussian lives in a window of +/- 2 FWHM around its center.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import erf

FOUR_LN2 = 4.0 * math.log(2.0)
#: integral of exp(-4 ln2 u^2) over the real line
GAUSS_AREA = math.sqrt(math.pi / FOUR_LN2)
#: half-width of the scheduling window in units of FWHM
WINDOW_HALF_WIDTH = 2.0
#: fraction of the full Gaussian area kept inside the +/- 2 FWHM window
TRUNCATED_FRACTION = float(erf(WINDOW_HALF_WIDTH * math.sqrt(FOUR_LN2)))


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianEnvelope:
    amplitude: float
    center: float
    fwhm: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be positive, got {self.fwhm}")

    def value(self, t):
        return self.amplitude * np.exp(-FOUR_LN2 * (np.asarray(t) - self.center) ** 2 / self.fwhm**2)

    def derivative(self, t):
        u = np.asarray(t) - self.center
        return -2.0 * FOUR_LN2 * u / self.fwhm**2 * self.value(t)


def gaussian_value(env: GaussianEnvelope, t):
    return env.value(t)


def quadrature_value(env: GaussianEnvelope, beta: float, delta: float, t):
    """Derivative quadrature ``-beta * dX/dt / delta`` (delta in rad/ns)."""
    if delta == 0:
        raise ValueError("quadrature scaling needs a non-zero anharmonicity")
    return -beta * env.derivative(t) / delta


def amplitude_for_angle(theta: float, fwhm: float) -> float:
    """Peak rate whose full Gaussian integral equals ``theta`` (two-level area theorem)."""
    if not fwhm > 0:
        raise ValueError("fwhm must be positive")
    return theta / (fwhm * GAUSS_AREA)


@dataclass(frozen=True)
class Shaping:
    """Quadrature recipe ``Y = -beta * dX/dt / delta``.

    ``beta=0`` is a plain Gaussian, ``0.5`` the half-derivative pulse and
    ``1.0`` the full derivative (DRAG) quadrature.
    """

    beta: float = 0.0

    @property
    def name(self) -> str:
        if self.beta == 0.0:
            return "gaussian"
        if self.beta == 0.5:
            return "hd"
        return f"beta={self.beta:g}"

    @classmethod
    def parse(cls, spec: Union[str, float, "Shaping"]) -> "Shaping":
        if isinstance(spec, Shaping):
            return spec
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            return cls(float(spec))
        key = str(spec).lower()
        if key in ("gaussian", "gaussian_only", "none"):
            return GAUSSIAN_ONLY
        if key in ("hd", "half_derivative", "half-derivative"):
            return HALF_DERIVATIVE
        if key in ("drag", "full_derivative"):
            return FULL_DERIVATIVE
        raise ValueError(f"unknown shaping protocol {spec!r}")


GAUSSIAN_ONLY = Shaping(0.0)
HALF_DERIVATIVE = Shaping(0.5)
FULL_DERIVATIVE = Shaping(1.0)


def derivative_scaled(beta: float) -> Shaping:
    return Shaping(float(beta))


@dataclass(frozen=True)
class GateSpec:
    """Microwave rotation by ``theta`` about the equatorial axis ``axis_phi``.

    ``transition`` is the lower level of the driven pair (0 for 0<->1, 1 for
    1<->2). ``drive_detuning`` (GHz) is the carrier offset from the frame.
    ``amplitude`` is an explicit peak rate (rad/ns, sign included) that
    overrides the area-theorem seed for the transition.
    """

    theta: float
    fwhm: float = 6.0
    axis_phi: float = 0.0
    shaping: Shaping = GAUSSIAN_ONLY
    transition: int = 0
    drive_detuning: float = 0.0
    amplitude: float | None = None

    def __post_init__(self):
        if not -2 * math.pi - 1e-12 <= self.theta <= 2 * math.pi + 1e-12:
            raise ValueError(f"theta out of [-2pi, 2pi]: {self.theta}")
        if not self.fwhm > 0:
            raise ValueError("fwhm must be positive")
        if self.transition not in (0, 1, 2, 3):
            raise ValueError(f"unsupported transition {self.transition}")

    @property
    def window(self) -> float:
        return 2 * WINDOW_HALF_WIDTH * self.fwhm

    def peak_amplitude(self) -> float:
        if self.amplitude is not None:
            return self.amplitude
        return amplitude_for_angle(self.theta, self.fwhm) / math.sqrt(self.transition + 1)

    def with_axis(self, axis_phi: float) -> "GateSpec":
        return replace(self, axis_phi=axis_phi)


@dataclass(frozen=True)
class ZPulseSpec:
    """Gaussian frequency excursion of ``amplitude`` GHz on the 0-1 transition."""

    amplitude: float
    fwhm: float = 6.0

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError("fwhm must be positive")

    @property
    def window(self) -> float:
        return 2 * WINDOW_HALF_WIDTH * self.fwhm

    def phase(self, truncated: bool = True) -> float:
        """Accumulated 0-1 phase 2 pi * integral of the pulse, in rad."""
        area = 2 * math.pi * self.amplitude * self.fwhm * GAUSS_AREA
        return area * TRUNCATED_FRACTION if truncated else area


@dataclass(frozen=True)
class Idle:
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("idle duration must be non-negative")

    @property
    def window(self) -> float:
        return self.duration


@dataclass(frozen=True)
class Simultaneous:
    """Elements sharing one window and a common center."""

    elements: tuple

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if any(isinstance(e, (Idle, Simultaneous, Overlay)) for e in self.elements):
            raise ScheduleError("Simultaneous groups hold only gate and Z pulses")

    @property
    def window(self) -> float:
        return max((e.window for e in self.elements), default=0.0)


@dataclass(frozen=True)
class Overlay:
    """Element pinned at an absolute ``center``; does not advance the cursor.

    Overlays are the explicit opt-in for pulses overlapping other windows.
    """

    element: Union[GateSpec, ZPulseSpec]
    center: float


Element = Union[GateSpec, ZPulseSpec, Idle, Simultaneous, Overlay]


@dataclass(frozen=True)
class ScheduledPulse:
    """One envelope placed on the timeline."""

    kind: str  # "drive" or "z"
    envelope: GaussianEnvelope
    start: float
    stop: float
    axis_phi: float = 0.0
    beta: float = 0.0
    delta: float | None = None
    drive_detuning: float = 0.0
    transition: int = 0
    overlay: bool = False

    def channels(self, t):
        """(x, y, z) contributions of this pulse at times ``t`` (array)."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.start) & (t <= self.stop)
        zero = np.zeros_like(t)
        if self.kind == "z":
            return zero, zero, np.where(inside, self.envelope.value(t), 0.0)
        X = self.envelope.value(t)
        Y = quadrature_value(self.envelope, self.beta, self.delta, t) if self.beta else zero
        phi = self.axis_phi - 2 * np.pi * self.drive_detuning * t
        x = np.cos(phi) * X - np.sin(phi) * Y
        y = np.sin(phi) * X + np.cos(phi) * Y
        return np.where(inside, x, 0.0), np.where(inside, y, 0.0), zero

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "shape": "gaussian",
            "amplitude": self.envelope.amplitude,
            "center": self.envelope.center,
            "fwhm": self.envelope.fwhm,
            "start": self.start,
            "stop": self.stop,
        }
        if self.kind == "drive":
            d.update(
                axis_phi=self.axis_phi,
                beta=self.beta,
                delta=self.delta,
                drive_detuning=self.drive_detuning,
                transition=self.transition,
            )
        if self.overlay:
            d["overlay"] = True
        return d


@dataclass(frozen=True)
class ControlSequence:
    duration: float = 0.0
    pulses: tuple = field(default_factory=tuple)

    def channels(self, t):
        """Evaluate (x, y, z) at scalar or array ``t``; zero outside [0, duration]."""
        t = np.asarray(t, dtype=float)
        x = np.zeros_like(t)
        y = np.zeros_like(t)
        z = np.zeros_like(t)
        for p in self.pulses:
            px, py, pz = p.channels(t)
            x = x + px
            y = y + py
            z = z + pz
        outside = (t < 0) | (t > self.duration)
        return tuple(np.where(outside, 0.0, c) for c in (x, y, z))

    def x(self, t):
        return self.channels(t)[0]

    def y(self, t):
        return self.channels(t)[1]

    def z(self, t):
        return self.channels(t)[2]

    def shifted(self, offset: float) -> "ControlSequence":
        """The same sequence delayed by ``offset`` ns (carrier phases stay tied to absolute time)."""
        moved = []
        for p in self.pulses:
            env = replace(p.envelope, center=p.envelope.center + offset)
            moved.append(replace(p, envelope=env, start=p.start + offset, stop=p.stop + offset))
        return ControlSequence(self.duration + offset, tuple(moved))

    def to_dict(self) -> dict:
        return {"duration": self.duration, "pulses": [p.to_dict() for p in self.pulses]}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "ControlSequence":
        pulses = []
        for d in data["pulses"]:
            env = GaussianEnvelope(d["amplitude"], d["center"], d["fwhm"])
            extra = {}
            if d["kind"] == "drive":
                extra = dict(
                    axis_phi=d["axis_phi"],
                    beta=d["beta"],
                    delta=d["delta"],
                    drive_detuning=d["drive_detuning"],
                    transition=d["transition"],
                )
            pulses.append(
                ScheduledPulse(d["kind"], env, d["start"], d["stop"], overlay=d.get("overlay", False), **extra)
            )
        return cls(data["duration"], tuple(pulses))


def _place(spec, center: float, delta: float | None, overlay: bool = False) -> ScheduledPulse:
    half = spec.window / 2
    if isinstance(spec, ZPulseSpec):
        env = GaussianEnvelope(spec.amplitude, center, spec.fwhm)
        return ScheduledPulse("z", env, center - half, center + half, overlay=overlay)
    if spec.shaping.beta != 0 and not delta:
        raise ScheduleError("derivative shaping needs the anharmonicity (rad/ns)")
    env = GaussianEnvelope(spec.peak_amplitude(), center, spec.fwhm)
    return ScheduledPulse(
        "drive",
        env,
        center - half,
        center + half,
        axis_phi=spec.axis_phi,
        beta=spec.shaping.beta,
        delta=delta,
        drive_detuning=spec.drive_detuning,
        transition=spec.transition,
        overlay=overlay,
    )


def schedule(
    elements: Iterable[Element],
    gap: float = 0.0,
    *,
    anharmonicity: float | None = None,
    start: float = 0.0,
) -> ControlSequence:
    """Place elements left to right with ``gap`` ns between consecutive windows.

    ``anharmonicity`` is Delta in rad/ns, needed by any derivative-shaped gate.
    Overlapping windows are only allowed through :class:`Overlay` and
    :class:`Simultaneous`.
    """
    if gap < 0:
        raise ScheduleError("negative gap would overlap consecutive windows")
    pulses: list[ScheduledPulse] = []
    cursor = start
    first = True
    for el in elements:
        if isinstance(el, Overlay):
            pulses.append(_place(el.element, el.center, anharmonicity, overlay=True))
            continue
        if not first:
            cursor += gap
        first = False
        if isinstance(el, Idle):
            cursor += el.duration
            continue
        members = el.elements if isinstance(el, Simultaneous) else (el,)
        center = cursor + el.window / 2
        for m in members:
            pulses.append(_place(m, center, anharmonicity, overlay=isinstance(el, Simultaneous)))
        cursor += el.window
    duration = cursor
    for p in pulses:
        if p.overlay and (p.start < -1e-9 or p.stop > duration + 1e-9):
            duration = max(duration, p.stop)
            if p.start < -1e-9:
                raise ScheduleError("overlay pulse starts before t=0")
    _check_overlap(pulses)
    return ControlSequence(duration, tuple(pulses))


def _check_overlap(pulses: Sequence[ScheduledPulse]) -> None:
    plain = sorted((p for p in pulses if not p.overlay), key=lambda p: p.start)
    for a, b in zip(plain, plain[1:]):
        if b.start < a.stop - 1e-9:
            raise ScheduleError(f"pulses overlap at t={b.start:.3f} ns without a simultaneous flag")


def truncated_area(theta: float) -> float:
    """Area of a seeded pulse of angle ``theta`` that survives the window cut."""
    return theta * TRUNCATED_FRACTION
