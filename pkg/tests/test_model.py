import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvoptic import model as m
from nvoptic.quantum import LevelBasis as Lv, basis_ket


@pytest.fixture(params=["zero-field", "bias"])
def nv(request):
    return m.get_preset(request.param).params()


def test_presets_normalized():
    for name in m.PRESETS:
        nv = m.get_preset(name).params()
        assert abs(abs(nv.c_plus) ** 2 + abs(nv.c_minus) ** 2 - 1) < 1e-12
    with pytest.raises(KeyError):
        m.get_preset("strong-field")


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        m.NVParams(delta=1.0, c_plus=0.9, c_minus=0.1)
    with pytest.raises(ValueError):
        m.NVParams(delta=1.0, c_plus=1.0, c_minus=0.0, gamma_ge=-1.0)


def test_convention_scaling():
    zf = m.get_preset("zero-field")
    assert zf.params("angular").delta == 2000.0
    assert zf.params("ordinary").delta == pytest.approx(2 * math.pi * 2000.0)
    assert m.to_internal(1.0, "ordinary") == pytest.approx(2 * math.pi)


def test_dark_state_decouples(nv):
    drive = m.matched_drive(nv, 2 * math.pi * 10, phi_L=0.3)
    h = m.build_laser_hamiltonian(nv, drive, include_a1=False)
    d = m.dark_state(nv, drive)
    assert np.max(np.abs(h @ d)) < 1e-12
    b = m.bright_state(nv, drive)
    assert abs(np.vdot(b, d)) < 1e-14
    assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-14)


def test_bright_state_couples_to_a2_only(nv):
    drive = m.matched_drive(nv, 5.0)
    h = m.build_laser_hamiltonian(nv, drive, include_a1=False)
    b = m.bright_state(nv, drive)
    # <A2|H|b> = Omega/2 with the default half convention
    assert abs(h[Lv.A2] @ b) == pytest.approx(5.0 / 2, rel=1e-12)


def test_dressed_gap_half_omega(nv):
    om = 7.3
    drive = m.matched_drive(nv, om)
    w = m.dressed_energies(nv, drive, include_a1=False)
    assert np.allclose(sorted(w), [-om / 2, 0, 0, 0, 0, om / 2], atol=1e-12)


def test_matched_drive_has_zero_kappa(nv):
    drive = m.matched_drive(nv, 10.0)
    assert abs(m.kappa(nv, drive)) < 1e-12
    assert m.effective_rabi(nv, drive) == pytest.approx(10.0)
    assert m.residual_T(nv, drive, 3.0) == math.inf


@settings(max_examples=30, deadline=None)
@given(phi=st.floats(-math.pi, math.pi), om=st.floats(0.1, 100.0))
def test_relative_phase_round_trip(phi, om):
    nv = m.get_preset("bias").params()
    drive = m.matched_drive(nv, om, phi)
    diff = (m.relative_phase(nv, drive) - phi + math.pi) % (2 * math.pi) - math.pi
    assert abs(diff) < 1e-9


def test_kappa_and_residual_time():
    nv = m.get_preset("zero-field").params()
    drive = m.matched_drive(nv, 10.0).scaled(1.0)
    drive = m.DriveConfig(drive.omega_plus * 1.02, drive.omega_minus, drive.phi_plus)
    kn = m.kappa(nv, drive, normalized=True)
    assert kn == pytest.approx((1.02 ** 2 - 1) / (1.02 ** 2 + 1), rel=1e-12)
    assert m.residual_T(nv, drive, 3.0) == pytest.approx(3.0 / kn)


def test_signal_operator_modes():
    nv = m.get_preset("zero-field").params()
    k = m.signal_coupling_operator(nv, m.SignalParams(0.1, 0.0, theta_sig=0.4))
    assert np.linalg.norm(k @ basis_ket(Lv.G0)) == pytest.approx(1.0)
    kb = m.signal_coupling_operator(nv, m.SignalParams(0.1, 0.0, mode="bias"))
    assert kb[Lv.GP, Lv.G0] == 0 and abs(kb[Lv.GM, Lv.G0]) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(ValueError):
        m.signal_coupling_operator(nv, m.SignalParams(0.1, 0.0, mode="tilted"))


def test_signal_hamiltonian_hermitian():
    nv = m.get_preset("zero-field").params()
    h = m.build_signal_hamiltonian(nv, m.SignalParams(0.3, 2870.1), None, 1.7, 0.4)
    assert np.allclose(h, h.conj().T)


def test_sensitive_phase_aligns_dark_state_with_signal():
    nv = m.get_preset("zero-field").params()
    theta = 0.37
    drive = m.matched_drive(nv, 10.0, 2 * theta + math.pi)
    k = m.signal_coupling_operator(nv, m.SignalParams(0.1, 0.0, theta_sig=theta))
    target = k @ basis_ket(Lv.G0)
    assert abs(np.vdot(m.dark_state(nv, drive), target)) == pytest.approx(1.0, abs=1e-12)
    assert abs(np.vdot(m.bright_state(nv, drive), target)) < 1e-12


def test_resonance_frequency_perturbative(nv):
    drive = m.matched_drive(nv, 2 * math.pi * 10)
    v = m.a1_coupling_row(nv, drive)
    d = m.dark_state(nv, drive)
    shift = abs(v @ d) ** 2 / nv.delta
    assert m.resonance_frequency(nv, drive) == pytest.approx(nv.eps_0m1 - shift, abs=1e-3 * shift)
    assert m.resonance_frequency(nv, drive.scaled(0.0)) == nv.eps_0m1


def test_lindblad_channel_rates():
    nv = m.get_preset("zero-field").params()
    rates = sorted(r for _, r in m.lindblad_channels(nv))
    assert rates == sorted([8.5, 8.5, 37.0, 8.5, 8.5, 37.0, 2.7])
    assert m.total_decay_rate(nv, "A2") == pytest.approx(54.0)
    assert m.lindblad_channels(nv.without_decay()) == []


def test_drive_amplitude_operators_are_derivatives(nv):
    drive = m.matched_drive(nv, 4.0, 0.2)
    dp, dm = m.drive_amplitude_operators(nv, drive)
    eps = 1e-6
    up = m.DriveConfig(drive.omega_plus + eps, drive.omega_minus, drive.phi_plus, drive.phi_minus)
    num = (m.build_laser_hamiltonian(nv, up) - m.build_laser_hamiltonian(nv, drive)) / eps
    assert np.allclose(num, dp, atol=1e-8)
