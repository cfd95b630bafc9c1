"""Independent reference propagator used to freeze DERIVED test values.

Written without touching apesim internals: adaptive DOP853 integration of the
Schroedinger equation for a driven anharmonic ladder, rotating frame, RWA.
Run ``python3 tests/oracle.py`` to regenerate the frozen numbers.
"""
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import polar

FOUR_LN2 = 4 * math.log(2)


def gauss_area(tau):
    # integral of exp(-4 ln2 t^2 / tau^2) over [-2 tau, 2 tau]
    return tau * math.sqrt(math.pi / FOUR_LN2) * math.erf(2 * math.sqrt(FOUR_LN2))


def pulse_unitary(dim, amp, tau, beta=0.0, anh=-0.2, rtol=1e-12, atol=1e-13):
    """Full propagator of one pulse on [0, 4 tau], center 2 tau, drive on 0<->1 frame."""
    delta = 2 * math.pi * anh
    n = np.arange(dim)
    energies = 2 * math.pi * (n * (n - 1) / 2 * anh)
    lower = np.diag(np.sqrt(np.arange(1, dim)), 1)  # a
    t0 = 2 * tau

    def rhs(t, v):
        psi = v.reshape(dim, dim)
        g = amp * math.exp(-FOUR_LN2 * (t - t0) ** 2 / tau**2)
        dg = -2 * FOUR_LN2 * (t - t0) / tau**2 * g
        x, y = g, -beta * dg / delta
        c = (x + 1j * y) / 2
        H = np.diag(energies).astype(complex) + c * lower.T + np.conj(c) * lower
        return (-1j * H @ psi).ravel()

    sol = solve_ivp(rhs, (0.0, 4 * tau), np.eye(dim, dtype=complex).ravel(), method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1].reshape(dim, dim)


def epsilon_from(U):
    """Phase error of the qubit block via polar projection and the (0,1) phase."""
    u, _ = polar(U[:2, :2])
    u = u * np.exp(-1j * np.angle(u[0, 0]))
    eps = -(np.angle(u[0, 1]) + math.pi / 2)
    return (eps + math.pi) % (2 * math.pi) - math.pi


def dense_amplitude(dim, tau, beta, theta, anh=-0.2, span=0.04, points=41):
    """Amplitude maximizing P1 (theta=pi) from a dense grid and a parabola fit."""
    seed = theta / gauss_area(tau)
    grid = seed * (1 + np.linspace(-span, span, points))
    p1 = np.array([abs(pulse_unitary(dim, a, tau, beta, anh, 1e-10, 1e-11)[1, 0]) ** 2 for a in grid])
    k = int(np.argmax(p1))
    c = np.polyfit(grid[k - 2 : k + 3], p1[k - 2 : k + 3], 2)
    return -c[1] / (2 * c[0])


if __name__ == "__main__":
    tau = 6.0
    a90 = (math.pi / 2) / gauss_area(tau)
    a180 = math.pi / gauss_area(tau)
    print("eps gaussian pi/2 seed", epsilon_from(pulse_unitary(3, a90, tau)))
    print("eps hd pi/2 seed", epsilon_from(pulse_unitary(3, a90, tau, 0.5)))
    print("P2 gaussian pi seed", abs(pulse_unitary(3, a180, tau)[2, 0]) ** 2)
    print("P2 hd pi seed", abs(pulse_unitary(3, a180, tau, 0.5)[2, 0]) ** 2)
    print("P1 d=2 pi seed", abs(pulse_unitary(2, a180, tau)[1, 0]) ** 2)
    print("amp gaussian pi d=3", dense_amplitude(3, tau, 0.0, math.pi))
    print("amp hd pi d=3", dense_amplitude(3, tau, 0.5, math.pi))
    betas = np.linspace(0.0, 1.0, 21)
    eps = [epsilon_from(pulse_unitary(3, a90, tau, b, rtol=1e-10, atol=1e-11)) for b in betas]
    k = int(np.nonzero(np.diff(np.sign(eps)))[0][0])
    b0 = betas[k] - eps[k] * (betas[k + 1] - betas[k]) / (eps[k + 1] - eps[k])
    print("beta zero crossing (seed amplitude)", b0)
    print("eps beta=1 seed", eps[-1])
