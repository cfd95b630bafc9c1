import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apesim.gate_algebra import NonConformingGateError
from apesim.pulse_lib import GAUSSIAN_ONLY, HALF_DERIVATIVE, GateSpec, Idle, ZPulseSpec, schedule
from apesim.qudit_sim import (
    PropagatorConfig,
    QuditParams,
    compose,
    effective_gate,
    effective_gate_from_unitary,
    gate_unitary,
    hamiltonian,
    leakage_scan,
    propagate,
    sequence_unitary,
    single_gate_epsilon,
)

from oracle import epsilon_from, gauss_area, pulse_unitary

P3 = QuditParams()
# frozen from tests/oracle.py (adaptive DOP853, rtol 1e-12), seed amplitudes, tau = 6 ns
ORACLE_EPS_GAUSS_HALF_PI = 0.07412100652354559
ORACLE_EPS_HD_HALF_PI = 0.00017427341461262458
ORACLE_P2_GAUSS_PI = 0.0005470275237752921
ORACLE_P2_HD_PI = 9.488418096034146e-05


def test_ladder_levels():
    p = QuditParams(dim=4)
    assert p.f21 == pytest.approx(5.8)
    assert np.allclose(np.diff(p.level_frequencies()), [6.0, 5.8, 5.6])
    with pytest.raises(ValueError):
        QuditParams(dim=1)


def test_hamiltonian_examples():
    H = hamiltonian(P3, schedule([Idle(1.0)]), 0.5)
    assert np.allclose(H, np.diag([0, 0, 2 * math.pi * -0.2]))
    p2 = QuditParams(dim=2)
    seq = schedule([GateSpec(math.pi, 6.0)])
    om = seq.x(12.0)
    assert np.allclose(hamiltonian(p2, seq, 12.0), om / 2 * np.array([[0, 1], [1, 0]]))
    H = hamiltonian(P3, seq, 12.0)
    assert H[2, 1] == pytest.approx(math.sqrt(2) * om / 2)
    with pytest.raises(ValueError):
        hamiltonian(P3, seq, 30.0)


def test_z_channel_shifts_by_level_index():
    seq = schedule([ZPulseSpec(0.1, 6.0)])
    H = hamiltonian(P3, seq, 12.0)
    assert np.allclose(np.diag(H).real, [0, 2 * math.pi * 0.1, 2 * math.pi * (2 * 0.1 - 0.2)])


def test_norm_and_unitarity():
    seq = schedule([GateSpec(math.pi / 2, 6.0, 0.0, HALF_DERIVATIVE), Idle(5.0), GateSpec(math.pi, 6.0)], anharmonicity=P3.delta)
    tr = propagate(P3, seq)
    assert np.max(np.abs(np.linalg.norm(tr.states, axis=1) - 1)) <= 1e-9
    U = tr.unitary
    assert np.max(np.abs(U.conj().T @ U - np.eye(3))) <= 1e-9
    assert np.allclose(tr.final_state, sequence_unitary(P3, seq)[:, 0], atol=1e-12)


def test_zero_drive_keeps_populations():
    psi0 = np.array([0.6, 0.48, 0.64j])
    psi0 /= np.linalg.norm(psi0)
    tr = propagate(P3, schedule([Idle(40.0)]), psi0)
    assert np.max(np.abs(tr.populations - np.abs(psi0) ** 2)) <= 1e-12


def test_non_normalized_state_rejected():
    with pytest.raises(ValueError):
        propagate(P3, schedule([GateSpec(math.pi, 6.0)]), np.array([1.0, 1.0, 0.0]))


def test_two_level_area_theorem():
    p = QuditParams(dim=2)
    psi = propagate(p, schedule([GateSpec(math.pi, 6.0)])).final_state
    assert abs(psi[1]) ** 2 == pytest.approx(1.0, abs=1e-6)


def test_dt_squared_convergence():
    seq = schedule([GateSpec(math.pi, 6.0)])
    ref = sequence_unitary(P3, seq, PropagatorConfig(0.005 / 32))
    errs = [np.max(np.abs(sequence_unitary(P3, seq, PropagatorConfig(dt)) - ref)) for dt in (0.02, 0.01, 0.005)]
    for a, b in zip(errs, errs[1:]):
        assert 2.0 <= a / b <= 8.0  # dt^2 within a factor two
        assert 3.2 <= a / b <= 4.8


def test_matches_independent_oracle():
    a = math.pi / gauss_area(6.0)
    ref = pulse_unitary(3, a, 6.0, 0.5)
    U = gate_unitary(P3, GateSpec(math.pi, 6.0, 0.0, HALF_DERIVATIVE, amplitude=a))
    assert np.max(np.abs(U - ref)) < 1e-6


def test_frozen_leakage_values():
    for shaping, want in ((GAUSSIAN_ONLY, ORACLE_P2_GAUSS_PI), (HALF_DERIVATIVE, ORACLE_P2_HD_PI)):
        U = gate_unitary(P3, GateSpec(math.pi, 6.0, 0.0, shaping))
        assert abs(U[2, 0]) ** 2 == pytest.approx(want, rel=1e-4)


def test_frozen_phase_errors():
    g = single_gate_epsilon(P3, math.pi / 2, 6.0, GAUSSIAN_ONLY)
    assert g.epsilon == pytest.approx(ORACLE_EPS_GAUSS_HALF_PI, rel=1e-5)
    assert 0.02 < g.epsilon < 0.3  # positive, order 0.1 rad
    h = single_gate_epsilon(P3, math.pi / 2, 6.0, HALF_DERIVATIVE)
    assert h.epsilon == pytest.approx(ORACLE_EPS_HD_HALF_PI, abs=1e-6)
    assert abs(h.epsilon) <= g.epsilon / 4


def test_two_level_has_no_phase_error():
    p = QuditParams(dim=2)
    for tau in (3.0, 6.0, 10.0):
        g = single_gate_epsilon(p, math.pi / 2, tau, GAUSSIAN_ONLY)
        assert abs(g.epsilon) <= 1e-6 and g.leakage <= 1e-9


def test_effective_gate_fields():
    seq = schedule([GateSpec(math.pi / 2, 6.0)])
    g = effective_gate(P3, seq)
    U = g.full_unitary
    assert np.max(np.abs(U.conj().T @ U - np.eye(3))) <= 1e-9
    assert 0 <= g.leakage <= 1
    block = U[:2, :2]
    assert g.leakage == pytest.approx(1 - (np.linalg.norm(block[:, 0]) ** 2 + np.linalg.norm(block[:, 1]) ** 2) / 2)
    assert g.epsilon == pytest.approx(epsilon_from(U), abs=1e-12)


def test_effective_gate_rejects_non_half_pi():
    with pytest.raises(NonConformingGateError):
        effective_gate(P3, schedule([GateSpec(math.pi, 6.0)]))


def test_epsilon_scaling_law():
    def e(th, tau):
        return single_gate_epsilon(P3, th, tau, GAUSSIAN_ONLY).epsilon

    # the template angle follows the gate angle
    U = gate_unitary(P3, GateSpec(math.pi / 4, 6.0))
    e_quarter = effective_gate_from_unitary(U, 24.0, theta=math.pi / 4).epsilon
    assert 3 <= e(math.pi / 2, 6.0) / e_quarter <= 5
    assert 1.6 <= e(math.pi / 2, 6.0) / e(math.pi / 2, 12.0) <= 2.4


def test_frame_invariance():
    dl, conf = 0.01, PropagatorConfig(0.0005)
    els = [GateSpec(math.pi / 2, 6.0, 0.0, HALF_DERIVATIVE), Idle(10.0), GateSpec(math.pi, 6.0)]
    moved = [GateSpec(math.pi / 2, 6.0, 0.0, HALF_DERIVATIVE, drive_detuning=-dl), Idle(10.0), GateSpec(math.pi, 6.0, drive_detuning=-dl)]
    a = propagate(P3, schedule(els, anharmonicity=P3.delta), config=conf).populations
    b = propagate(P3.with_frame(P3.f10 + dl), schedule(moved, anharmonicity=P3.delta), config=conf).populations
    assert np.max(np.abs(a - b)) <= 1e-9


@given(st.floats(min_value=0.0, max_value=2 * math.pi), st.floats(min_value=0.0, max_value=30.0))
@settings(max_examples=15, deadline=None)
def test_compose_matches_full_schedule(axis, idle):
    els = [GateSpec(math.pi / 2, 6.0, axis, HALF_DERIVATIVE), Idle(idle), GateSpec(-math.pi / 2, 6.0, 0.0, GAUSSIAN_ONLY, drive_detuning=0.003)]
    U, dur = compose(P3, els)
    seq = schedule(els, anharmonicity=P3.delta)
    assert dur == pytest.approx(seq.duration)
    assert np.max(np.abs(U - sequence_unitary(P3, seq))) < 1e-10


def test_counter_rotating_terms_are_small():
    seq = schedule([GateSpec(math.pi, 6.0)])
    rwa = propagate(P3, seq).populations[-1]
    full = propagate(P3, seq, config=PropagatorConfig(0.001, rotating_wave=False)).populations[-1]
    assert np.max(np.abs(rwa - full)) < 1e-2


def test_leakage_scan_trend_and_limits():
    out = dict(leakage_scan(P3, GAUSSIAN_ONLY, math.pi, [4.0, 6.0, 8.0]))
    assert out[4.0] > out[6.0] > out[8.0]
    big = leakage_scan(P3, HALF_DERIVATIVE, math.pi, [20.0])[0][1]
    assert big < 1e-6
    assert leakage_scan(P3, GAUSSIAN_ONLY, math.pi, [20.0])[0][1] < 1e-6
    with pytest.raises(ValueError):
        leakage_scan(QuditParams(dim=2), GAUSSIAN_ONLY, math.pi, [6.0])


def test_trajectory_csv(tmp_path):
    tr = propagate(QuditParams(dim=2), schedule([GateSpec(math.pi, 2.0)]), config=PropagatorConfig(0.5))
    path = tmp_path / "traj.csv"
    tr.to_csv(path, amplitudes=True)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t_ns", "P0", "P1", "re0", "im0", "re1", "im1"]
    assert len(rows) == len(tr.times) + 1
