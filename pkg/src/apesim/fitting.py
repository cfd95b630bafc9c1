"""Sinusoid fits for phase and time fringes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar


class FitError(RuntimeError):
    """A fringe could not be fitted (bad grid, too few periods, no contrast)."""


@dataclass(frozen=True)
class FringeScan:
    abscissa: np.ndarray
    p: np.ndarray
    kind: str = "phase"  # "phase" (rad) or "time" (ns, or any abscissa unit)

    def __post_init__(self):
        a = np.asarray(self.abscissa, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if a.shape != p.shape or a.ndim != 1:
            raise ValueError("abscissa and p must be 1-D arrays of equal length")
        if a.size > 1 and np.any(np.diff(a) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if self.kind not in ("phase", "time"):
            raise ValueError(f"unknown fringe kind {self.kind!r}")
        object.__setattr__(self, "abscissa", a)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class FringeFit:
    """``p = mean + amplitude * cos(k * x - phase_offset)``.

    ``k`` is 1 for phase fringes and ``2 pi frequency`` for time fringes.
    """

    amplitude: float
    phase_offset: float
    mean: float
    rms_residual: float
    frequency: float | None = None

    def model(self, x):
        k = 1.0 if self.frequency is None else 2 * np.pi * self.frequency
        return self.mean + self.amplitude * np.cos(k * np.asarray(x) - self.phase_offset)


def phase_grid(points: int = 64, start: float = 0.0) -> np.ndarray:
    """Uniform full-period grid (endpoint excluded)."""
    return start + 2 * np.pi * np.arange(points) / points


def fit_fringe(scan: FringeScan) -> FringeFit:
    if scan.p.size < 8:
        raise FitError("need at least 8 samples")
    if scan.kind == "phase":
        return _fit_phase(scan.abscissa, scan.p)
    return _fit_time(scan.abscissa, scan.p)


def _fit_phase(phi: np.ndarray, p: np.ndarray) -> FringeFit:
    steps = np.diff(phi)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise FitError("phase fringe needs a uniform grid")
    span = steps[0] * phi.size
    periods = span / (2 * np.pi)
    if periods < 1 - 1e-9 or abs(periods - round(periods)) > 1e-9:
        raise FitError("phase grid must cover a whole number (>= 1) of periods")
    n = p.size
    c = 2.0 / n * np.sum(p * np.exp(1j * phi))
    mean = float(np.mean(p))
    amp = float(abs(c))
    phase = float(np.angle(c)) if amp > 1e-14 else 0.0
    resid = p - (mean + amp * np.cos(phi - phase))
    return FringeFit(amp, phase, mean, float(np.sqrt(np.mean(resid**2))))


def _linear_fit(t, p, f):
    w = 2 * np.pi * f
    A = np.column_stack([np.ones_like(t), np.cos(w * t), np.sin(w * t)])
    coef, *_ = np.linalg.lstsq(A, p, rcond=None)
    resid = p - A @ coef
    return coef, resid


def _fit_time(t: np.ndarray, p: np.ndarray) -> FringeFit:
    span = t[-1] - t[0]
    n = t.size
    dt = span / (n - 1)
    pad = 64 * n
    spec = np.abs(np.fft.rfft(p - p.mean(), pad))
    freqs = np.fft.rfftfreq(pad, dt)
    k = int(np.argmax(spec[1:]) + 1)
    if spec[k] <= 1e-12 * max(1.0, float(np.max(np.abs(p)))) * n:
        raise FitError("no oscillation found")
    if 0 < k < spec.size - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    f_peak = freqs[k] + shift * (freqs[1] - freqs[0])
    bin_width = 1.0 / span
    lo = max(f_peak - bin_width / 2, 1e-12)
    res = minimize_scalar(
        lambda f: float(np.sum(_linear_fit(t, p, f)[1] ** 2)),
        bounds=(lo, f_peak + bin_width / 2),
        method="bounded",
        options={"xatol": 1e-12 * max(1.0, f_peak)},
    )
    f = float(res.x)
    if f * span < 2.0:
        raise FitError(f"only {f * span:.2f} oscillation periods in the scan")
    (m, a_c, a_s), resid = _linear_fit(t, p, f)
    return FringeFit(
        float(np.hypot(a_c, a_s)),
        float(np.arctan2(a_s, a_c)),
        float(m),
        float(np.sqrt(np.mean(resid**2))),
        f,
    )


def sample_probabilities(p, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Binomial estimate of each probability from ``shots`` projective measurements."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    return rng.binomial(shots, p) / shots
