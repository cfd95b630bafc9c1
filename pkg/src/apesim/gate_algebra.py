"""Closed-form 2x2 gate model for phase-corrupted rotations.

Gates are plain ``(2, 2)`` complex numpy arrays. A phase-corrupted
rotation is ``Z_eps @ X_theta @ Z_eps`` with ``Z_eps = diag(1, exp(-i eps))``;
global phases are discarded everywhere via :func:`distance_mod_phase`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

#: residual above which a gate is not considered a phase-corrupted rotation
CONFORMANCE_THRESHOLD = 0.05


class NonConformingGateError(ValueError):
    """The gate does not fit the ``Z_eps X_theta Z_eps`` template."""


def rotation(axis_phi: float, theta: float) -> np.ndarray:
    """exp(-i theta/2 (cos(phi) sx + sin(phi) sy))."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array(
        [[c, -1j * s * np.exp(-1j * axis_phi)], [-1j * s * np.exp(1j * axis_phi), c]],
        dtype=complex,
    )


def z_phase(eps: float) -> np.ndarray:
    return np.diag([1.0, np.exp(-1j * eps)]).astype(complex)


def corrupted_rotation(theta: float, eps: float) -> np.ndarray:
    z = z_phase(eps)
    return z @ rotation(0.0, theta) @ z


def pseudo_identity(theta: float, eps: float) -> np.ndarray:
    """Positive rotation followed by the negative one (operator order -theta . theta)."""
    return corrupted_rotation(-theta, eps) @ corrupted_rotation(theta, eps)


def predicted_ape_shift(n: int, eps: float) -> float:
    """Relative z-phase accumulated by ``n`` pseudo-identities."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return 2.0 * n * eps


def distance_mod_phase(a: np.ndarray, b: np.ndarray) -> float:
    """min over phi of max|a - exp(i phi) b|, with phi taken from tr(b^dag a)."""
    overlap = np.trace(b.conj().T @ a)
    phase = np.exp(1j * np.angle(overlap)) if abs(overlap) > 0 else 1.0
    return float(np.max(np.abs(a - phase * b)))


def canonicalize(gate: np.ndarray) -> np.ndarray:
    """Remove the global phase so that entry (0, 0) is real and non-negative."""
    g = np.asarray(gate, dtype=complex)
    ref = g[0, 0] if abs(g[0, 0]) > 1e-12 else g[0, 1]
    return g * np.exp(-1j * np.angle(ref))


def is_unitary(gate: np.ndarray, tol: float = 1e-12) -> bool:
    g = np.asarray(gate)
    return bool(np.max(np.abs(g.conj().T @ g - np.eye(g.shape[0]))) <= tol)


@dataclass(frozen=True)
class PhaseEstimate:
    epsilon: float
    residual: float

    @property
    def conforming(self) -> bool:
        return self.residual <= CONFORMANCE_THRESHOLD


def extract_epsilon(
    gate: np.ndarray,
    theta: float = np.pi / 2,
    strict: bool = True,
    threshold: float = CONFORMANCE_THRESHOLD,
) -> PhaseEstimate:
    """Invert the corrupted-rotation template.

    The off-diagonal phase carries eps at first order; the residual is the
    max-norm distance from ``corrupted_rotation(theta, eps)`` after the global
    phase is removed, which also checks the (1, 1) entry.
    """
    g = canonicalize(gate)
    eps = -(np.angle(g[0, 1]) + np.pi / 2)
    eps = float((eps + np.pi) % (2 * np.pi) - np.pi)
    residual = float(np.max(np.abs(g - corrupted_rotation(theta, eps))))
    if strict and residual > threshold:
        raise NonConformingGateError(
            f"gate residual {residual:.3g} exceeds {threshold} for theta={theta:.4g}"
        )
    return PhaseEstimate(eps, residual)
