import math

import numpy as np
import pytest

from qmemlink import polarization as pol


def test_stokes_basis_conventions():
    assert np.allclose(pol.jones_to_stokes(pol.H_STATE).as_array(), [1, 1, 0, 0], atol=1e-12)
    assert np.allclose(pol.jones_to_stokes(pol.L_STATE).as_array(), [1, 0, 0, 1], atol=1e-12)
    assert np.allclose(pol.jones_to_stokes(pol.D_STATE).as_array(), [1, 0, 1, 0], atol=1e-12)
    assert np.allclose(pol.jones_to_stokes(pol.V_STATE).as_array(), [1, -1, 0, 0], atol=1e-12)
    assert np.allclose(pol.jones_to_stokes(pol.A_STATE).as_array(), [1, 0, -1, 0], atol=1e-12)
    assert np.allclose(pol.jones_to_stokes(pol.R_STATE).as_array(), [1, 0, 0, -1], atol=1e-12)


def test_half_waveplate_actions():
    u0 = pol.waveplate("half", 0.0)
    out = pol.from_array(u0 @ pol.H_STATE.as_array())
    assert pol.states_equal_up_to_phase(out, pol.H_STATE)
    u = pol.waveplate("half", math.pi / 8)
    out = pol.from_array(u @ pol.H_STATE.as_array())
    assert pol.states_equal_up_to_phase(out, pol.D_STATE)


def test_quarter_waveplate_makes_circular():
    u = pol.waveplate("quarter", math.pi / 4)
    out = pol.from_array(u @ pol.H_STATE.as_array())
    assert abs(abs(pol.jones_to_stokes(out).s3) - 1.0) < 1e-12


@pytest.mark.parametrize("kind", ["half", "quarter"])
def test_waveplates_are_unitary(kind):
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = pol.waveplate(kind, rng.uniform(0, 2 * math.pi))
        assert pol.is_unitary(u)


def test_unknown_waveplate_kind():
    with pytest.raises(ValueError):
        pol.waveplate("third", 0.0)


def test_projector_examples():
    p_h = pol.projector(pol.AnalyzerSetting(hwp_deg=0.0, port="transmit"))
    expect_h = np.outer(pol.H_STATE.as_array(), pol.H_STATE.as_array().conj())
    assert np.allclose(p_h, expect_h, atol=1e-12)
    p_d = pol.projector(pol.AnalyzerSetting(hwp_deg=22.5, port="transmit"))
    expect_d = np.outer(pol.D_STATE.as_array(), pol.D_STATE.as_array().conj())
    assert np.allclose(p_d, expect_d, atol=1e-12)


def test_projector_idempotent_with_unit_trace():
    rng = np.random.default_rng(1)
    for _ in range(30):
        setting = pol.AnalyzerSetting(
            hwp_deg=rng.uniform(0, 180),
            qwp_deg=rng.uniform(0, 180) if rng.random() < 0.5 else None,
            port="transmit" if rng.random() < 0.5 else "reflect",
        )
        p = pol.projector(setting)
        assert np.allclose(p @ p, p, atol=1e-12)
        assert np.allclose(p, p.conj().T, atol=1e-12)
        assert abs(np.trace(p).real - 1.0) < 1e-12
        eigs = np.sort(np.linalg.eigvalsh(p))
        assert np.allclose(eigs, [0.0, 1.0], atol=1e-12)


def test_unitaries_preserve_s0_and_purity():
    rng = np.random.default_rng(2)
    for _ in range(30):
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        j = pol.from_array(a / np.linalg.norm(a))
        s_before = pol.jones_to_stokes(j)
        u = pol.random_unitary(rng)
        s_after = pol.jones_to_stokes(pol.from_array(u @ j.as_array()))
        assert abs(s_after.s0 - s_before.s0) < 1e-12
        assert abs(s_after.purity() - s_before.purity()) < 1e-10


def test_pure_state_purity_saturates_s0():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        j = pol.from_array(a / np.linalg.norm(a))
        s = pol.jones_to_stokes(j)
        assert abs(s.purity() - s.s0**2) < 1e-9


def test_random_unitary_and_reorthonormalize():
    rng = np.random.default_rng(4)
    u = pol.random_unitary(rng)
    assert pol.is_unitary(u)
    drifted = u + 1e-8 * rng.normal(size=(2, 2))
    fixed = pol.reorthonormalize(drifted)
    assert pol.is_unitary(fixed)


def test_rotation_unitary_angle():
    u = pol.rotation_unitary([0, 0, 1], math.pi)
    # pi rotation about s3: H goes to V up to phase
    out = pol.from_array(u @ pol.H_STATE.as_array())
    assert pol.states_equal_up_to_phase(out, pol.V_STATE)
