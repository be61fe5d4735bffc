import math

import numpy as np
import pytest

from qmemlink import conversion as conv
from qmemlink import polarization as pol


def test_dfg_efficiency_values():
    q = conv.QfcParams()
    assert conv.dfg_efficiency(1.749, "V", q) == pytest.approx(0.485, abs=1e-12)
    assert conv.dfg_efficiency(1.749, "H", q) == pytest.approx(0.472, abs=1e-12)
    assert conv.dfg_efficiency(0.0, "V", q) == 0.0
    half = 0.485 * math.sin(math.pi / (2.0 * math.sqrt(2.0))) ** 2
    assert conv.dfg_efficiency(1.749 / 2.0, "V", q) == pytest.approx(half, abs=1e-12)
    assert half == pytest.approx(0.390, abs=1e-3)
    with pytest.raises(ValueError):
        conv.dfg_efficiency(-0.1, "V", q)


def test_dfg_peak_condition_and_argmax():
    q = conv.QfcParams()
    assert q.alpha_nor * q.p_peak_w * q.crystal_length_mm**2 == pytest.approx(
        (math.pi / 2.0) ** 2, abs=1e-9
    )
    grid = np.linspace(0.0, 3.0, 6001)
    effs = conv.dfg_efficiency(grid, "V", q)
    assert abs(grid[np.argmax(effs)] - q.p_peak_w) <= grid[1] - grid[0]


def test_converter_eqe_breakdown():
    q = conv.QfcParams()
    assert conv.converter_eqe(q) == pytest.approx(0.726, abs=2e-3)
    stages = [q.coupling_eff, q.optics_eff, q.internal_eff]
    product = 1.0
    for s in stages:
        product *= s
    assert conv.converter_eqe(q) == pytest.approx(product, abs=1e-12)
    unity = conv.QfcParams(coupling_eff=1.0, optics_eff=1.0, internal_eff=1.0)
    assert conv.converter_eqe(unity) == 1.0


def test_filter_transmission():
    f = conv.FilterParams()
    assert conv.filter_transmission(f) == pytest.approx(0.669, abs=2e-3)
    assert conv.filter_transmission(f, include_bpf_coupling=True) == pytest.approx(
        0.5531, abs=2e-3
    )
    unity = conv.FilterParams(flange_fpc_eff=1.0, etalon_eff=1.0, vbg_eff=1.0)
    assert conv.filter_transmission(unity) == 1.0


def test_noise_budget():
    budget = conv.noise_budget()
    assert budget["total_cps"] == pytest.approx(280.0)
    assert conv.noise_budget(0.0, 0.0)["total_cps"] == 0.0
    only = conv.noise_budget(250.0, 0.0)
    assert only["total_cps"] == pytest.approx(250.0)
    extra = conv.noise_budget(250.0, 30.0, stray_light=5.0)
    assert extra["total_cps"] == pytest.approx(285.0)
    assert extra["total_cps"] == pytest.approx(sum(extra["components"].values()))


def _random_geometry(rng) -> conv.SagnacGeometry:
    k_s = rng.uniform(1e3, 1e5)
    k_c = rng.uniform(0.2, 0.8) * k_s
    return conv.SagnacGeometry(
        l1_m=rng.uniform(0.01, 1.0),
        l2_m=rng.uniform(0.01, 1.0),
        s1_m=rng.uniform(0.01, 1.0),
        s2_m=rng.uniform(0.0, 1.0),
        k_signal=k_s,
        k_converted=k_c,
        disp_h=rng.uniform(-3.0, 3.0),
        disp_v=rng.uniform(-3.0, 3.0),
        disp_m2=rng.uniform(-3.0, 3.0),
        disp_m3=rng.uniform(-3.0, 3.0),
    )


def test_conversion_phase_symmetric_loop_is_zero():
    g = conv.SagnacGeometry(l1_m=0.3, l2_m=0.3, s2_m=0.0)
    assert conv.conversion_phase_difference(g) == 0.0
    assert conv.pump_phase_difference(g) == 0.0


def test_conversion_phase_matches_direct_subtraction():
    rng = np.random.default_rng(10)
    for _ in range(1000):
        g = _random_geometry(rng)
        direct = conv.arm_phase_h(g) - conv.arm_phase_v(g)
        assert abs(direct - conv.conversion_phase_difference(g)) < 1e-9


def test_conversion_phase_reaches_pi():
    k_s = 2.0 * math.pi / 780e-9
    k_c = 2.0 * math.pi / 1522e-9
    k_p = k_s - k_c
    g = conv.SagnacGeometry(
        l1_m=0.25, l2_m=0.25, s2_m=math.pi / k_p / 2.0, k_signal=k_s, k_converted=k_c
    )
    assert conv.conversion_phase_difference(g) == pytest.approx(math.pi, rel=1e-12)


def test_pump_phase_tracks_conversion_phase():
    rng = np.random.default_rng(11)
    base = _random_geometry(rng)
    offsets = []
    for s2 in np.linspace(0.0, 0.5, 7):
        g = conv.SagnacGeometry(
            l1_m=base.l1_m,
            l2_m=base.l2_m,
            s1_m=base.s1_m,
            s2_m=s2,
            k_signal=base.k_signal,
            k_converted=base.k_converted,
            disp_h=0.3,
            disp_v=-0.2,
            disp_m2=0.1,
            disp_m3=0.4,
        )
        offsets.append(conv.pump_phase_difference(g) - conv.conversion_phase_difference(g))
    assert np.ptp(offsets) < 1e-9


def test_pump_phase_quadrature_value():
    k_s, k_c = 1e4, 4e3
    k_p = k_s - k_c
    g = conv.SagnacGeometry(
        l1_m=0.2, l2_m=0.2, s2_m=(math.pi / 2.0) / k_p / 2.0, k_signal=k_s, k_converted=k_c
    )
    assert conv.pump_phase_difference(g) == pytest.approx(math.pi / 2.0, rel=1e-12)


def test_lock_error_signal():
    g = conv.SagnacGeometry(l1_m=0.3, l2_m=0.3, s2_m=0.0, pump_leak_w=1e-3)
    assert conv.lock_error_signal(g) == 0.0
    k_p = g.k_pump
    quarter = conv.SagnacGeometry(
        l1_m=0.3, l2_m=0.3, s2_m=(math.pi / 2.0) / (2.0 * k_p), pump_leak_w=1e-3
    )
    assert conv.lock_error_signal(quarter) == pytest.approx(2e-3, rel=1e-9)
    minus = conv.SagnacGeometry(
        l1_m=0.3, l2_m=0.3, s2_m=-(math.pi / 2.0) / (2.0 * k_p), pump_leak_w=1e-3
    )
    assert conv.lock_error_signal(minus) == pytest.approx(-2e-3, rel=1e-9)


def test_lock_loop_recovers_from_step_drift():
    g = conv.SagnacGeometry()
    gains = conv.LockGains()
    state = conv.LockState()
    for _ in range(200):
        state = conv.lock_loop_step(state, g, gains)
    state = conv.lock_loop_step(state, g, gains, drift_m=50e-9)
    history = []
    for _ in range(999):
        state = conv.lock_loop_step(state, g, gains)
        history.append(
            abs(conv.wrap_phase(conv.pump_phase_difference(conv.locked_geometry(state, g))))
        )
    assert min(history) < 1e-3
    assert history[-1] < 1e-3


def test_lock_loop_zero_gains_follow_drift():
    g = conv.SagnacGeometry()
    state = conv.lock_loop_step(conv.LockState(), g, conv.LockGains(0.0, 0.0), drift_m=50e-9)
    moved = conv.wrap_phase(
        conv.pump_phase_difference(conv.locked_geometry(state, g))
    ) - conv.wrap_phase(conv.pump_phase_difference(g))
    assert moved == pytest.approx(2.0 * g.k_pump * 50e-9, rel=1e-6)


def test_lock_loop_stationary_at_lock_point():
    g = conv.SagnacGeometry()
    gains = conv.LockGains()
    state = conv.LockState()
    for _ in range(3):
        state = conv.lock_loop_step(state, g, gains)
    assert state.pzt_m == 0.0 and state.integral == 0.0


def test_convert_photon_polarization_independent_at_lock():
    q = conv.QfcParams(eta_max_h=0.485, eta_max_v=0.485)
    rng = np.random.default_rng(12)
    for state in (pol.H_STATE, pol.D_STATE, pol.L_STATE):
        out = None
        while out is None or not out.survived:
            out = conv.convert_photon(state, 1.749, q, rng)
        assert pol.state_fidelity(out.pol_out, state) == pytest.approx(1.0, abs=1e-12)


def test_convert_photon_diagonal_overlap():
    q = conv.QfcParams()
    m = conv.qfc_jones_operator(q)
    out = m @ pol.D_STATE.as_array()
    overlap = abs(np.vdot(pol.D_STATE.as_array(), out)) ** 2 / np.vdot(out, out).real
    expected = (math.sqrt(0.472) + math.sqrt(0.485)) ** 2 / (2.0 * (0.472 + 0.485))
    assert overlap == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.99995, abs=5e-5)


def test_convert_photon_pi_phase_flips_diagonal():
    q = conv.QfcParams(eta_max_h=0.485, eta_max_v=0.485)
    m = conv.qfc_jones_operator(q, phase_difference=math.pi)
    out = pol.from_array(m @ pol.D_STATE.as_array()).normalized()
    assert pol.states_equal_up_to_phase(out, pol.A_STATE)


def test_convert_photon_survival_rate():
    q = conv.QfcParams()
    rng = np.random.default_rng(13)
    n = 50_000
    wins = sum(conv.convert_photon(pol.V_STATE, 1.749, q, rng).survived for _ in range(n))
    p = 0.485
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(wins / n - p) < 4.0 * sigma


def test_convert_photon_requires_normalized_input():
    q = conv.QfcParams()
    rng = np.random.default_rng(14)
    with pytest.raises(ValueError):
        conv.convert_photon(pol.JonesVector(1.0, 1.0), 1.0, q, rng)


def test_sagnac_wavevector_invariant():
    with pytest.raises(ValueError):
        conv.SagnacGeometry(k_signal=1e4, k_converted=4e3, k_pump=5e3)
