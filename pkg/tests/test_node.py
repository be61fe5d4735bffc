import math

import numpy as np
import pytest

from qmemlink import node
from qmemlink.node import NodeParams, TwoQubitState


def thermal_white_fraction(p_exc: float) -> float:
    """Independent oracle for the multi-excitation white-noise weight.

    Enumerates a pair source with thermal number statistics P(n) = (1-x) x^n
    truncated at n = 2, solving x so that P(1) = p_exc.  A herald picks up
    double emissions twice as often (two photons, vanishing detection
    efficiency); the second excitation is unpolarized and uncorrelated, so
    those heralds contribute a maximally mixed pair.
    """
    x = (1.0 - math.sqrt(1.0 - 4.0 * p_exc)) / 2.0
    p1 = (1.0 - x) * x
    p2 = (1.0 - x) * x * x
    return 2.0 * p2 / (p1 + 2.0 * p2)


def test_initial_state_pure_bell_at_zero_excitation():
    st = node.initial_state(NodeParams(p_exc=0.0))
    st.validate()
    assert abs(st.fidelity_with_bell() - 1.0) < 1e-12


def test_white_noise_weight_matches_enumeration():
    for p in (1e-4, 1e-3, 5e-3, 1e-2, 2e-2):
        w_model = node.multi_excitation_weight(NodeParams(p_exc=p))
        w_enum = thermal_white_fraction(p)
        assert abs(w_model - 2.0 * p) < 1e-15
        assert abs(w_enum - w_model) <= 5.0 * p**2


def test_pole_correlation_non_increasing_in_excitation():
    zz = np.kron(np.diag([1.0, -1.0]), np.diag([1.0, -1.0]))
    last = np.inf
    for p in (0.0, 0.005, 0.01, 0.02, 0.05):
        st = node.initial_state(NodeParams(p_exc=p))
        corr = float(np.trace(st.rho @ zz).real)
        assert corr <= last + 1e-12
        last = corr


def test_initial_state_invalid_params():
    with pytest.raises(ValueError):
        node.initial_state(NodeParams(p_exc=-0.01))
    with pytest.raises(ValueError):
        node.initial_state(NodeParams(eta0=1.5))


def test_retrieval_efficiency_anchors():
    params = NodeParams()
    assert node.retrieval_efficiency(0.0, params) == pytest.approx(0.5, abs=1e-12)
    assert node.retrieval_efficiency(160.0, params) == pytest.approx(0.5 / math.e, abs=1e-12)
    assert node.retrieval_efficiency(80.0, params) == pytest.approx(
        0.5 * math.exp(-0.25), abs=1e-12
    )
    expo = NodeParams(decay_shape="exponential")
    assert node.retrieval_efficiency(160.0, expo) == pytest.approx(0.5 / math.e, abs=1e-12)
    with pytest.raises(ValueError):
        node.retrieval_efficiency(-1.0, params)


def test_retrieval_modulation_default_off_and_small():
    base = NodeParams()
    mod = NodeParams(mod_amplitude=0.05, mod_period_us=5.6)
    t = np.linspace(0.0, 100.0, 57)
    plain = node.retrieval_efficiency(t, base)
    wavy = node.retrieval_efficiency(t, mod)
    assert np.max(np.abs(wavy - plain)) <= 0.05 * np.max(plain) + 1e-12
    assert np.any(wavy != plain)


def test_larmor_period_and_phase():
    params = NodeParams()
    period = node.larmor_period_us(params)
    assert abs(period - 5.6054) < 5e-4
    assert node.larmor_phase(0.0, params) == 0.0
    assert node.larmor_phase(period / 2.0, params) == pytest.approx(math.pi, abs=1e-12)
    assert node.larmor_phase(period, params) == pytest.approx(2.0 * math.pi, abs=1e-12)


def _random_state(rng) -> TwoQubitState:
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return TwoQubitState(rho / np.trace(rho).real)


def test_memory_channel_identity_cases():
    params = NodeParams()
    st = node.initial_state(NodeParams(p_exc=0.01))
    out = node.apply_memory_channel(st, 0.0, params)
    assert np.allclose(out.rho, st.rho, atol=1e-12)
    period = node.larmor_period_us(params)
    out = node.apply_memory_channel(st, period, params)
    assert np.allclose(out.rho, st.rho, atol=1e-10)


def test_memory_channel_composition_and_invariants():
    rng = np.random.default_rng(5)
    params = NodeParams(coherence_tau_us=500.0)
    for _ in range(10):
        st = _random_state(rng)
        a = node.apply_memory_channel(node.apply_memory_channel(st, 12.5, params), 30.0, params)
        b = node.apply_memory_channel(st, 42.5, params)
        assert np.allclose(a.rho, b.rho, atol=1e-9)
        a.validate()


def test_memory_channel_jitter_sampling():
    params = NodeParams(phase_jitter_sigma_rad=0.5, jitter_ref_us=100.0)
    st = node.initial_state(NodeParams(p_exc=0.0))
    rng = np.random.default_rng(6)
    outs = [node.apply_memory_channel(st, 100.0, params, rng=rng).rho[0, 3] for _ in range(64)]
    phases = np.angle(outs)
    assert np.std(phases) > 0.1         # jitter actually samples
    for o in outs[:5]:
        assert abs(abs(o) - 0.5) < 1e-9  # magnitude untouched by pure phase noise
    # without an rng the channel is deterministic
    a = node.apply_memory_channel(st, 100.0, params)
    b = node.apply_memory_channel(st, 100.0, params)
    assert np.array_equal(a.rho, b.rho)


def test_raman_transfer_mapping():
    down_x = np.array([1.0, 1.0]) / math.sqrt(2.0)
    up_x = np.array([1.0, -1.0]) / math.sqrt(2.0)
    u = node.raman_unitary(0.0)
    assert abs(abs((u @ down_x)[0]) - 1.0) < 1e-12
    assert abs(abs((u @ up_x)[1]) - 1.0) < 1e-12
    # quarter-turn error maps the superposition eigenstates to even mixtures
    u_bad = node.raman_unitary(math.pi / 2.0)
    out = u_bad @ down_x
    assert abs(abs(out[0]) ** 2 - 0.5) < 1e-12


def test_raman_contrast_factor_is_cosine_of_error():
    for err in (0.0, 0.1734, 0.3):
        rho_x = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
        u = node.raman_unitary(err)
        out = u @ rho_x @ u.conj().T
        contrast = float((out[0, 0] - out[1, 1]).real)
        assert contrast == pytest.approx(math.cos(err), abs=1e-12)


def test_raman_bloch_matrix_matches_unitary():
    rng = np.random.default_rng(7)
    for err in (0.0, 0.2, -0.4):
        r3 = node.raman_bloch_matrix(err)
        u = node.raman_unitary(err)
        for _ in range(5):
            v = rng.normal(size=2) + 1j * rng.normal(size=2)
            v /= np.linalg.norm(v)
            rho = np.outer(v, v.conj())
            direct = node.atom_bloch(u @ rho @ u.conj().T)
            mapped = r3 @ node.atom_bloch(rho)
            assert np.allclose(direct, mapped, atol=1e-12)


def test_readout_sample_pure_down():
    params = NodeParams(eta0=1.0)
    rho_down = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    rng = np.random.default_rng(8)
    for _ in range(200):
        res = node.readout_sample(rho_down, "z", 0.0, params, rng)
        if res.retrieved:
            assert res.outcome == "down"


def test_readout_retrieval_probability_at_lifetime():
    params = NodeParams()
    rho = np.eye(2, dtype=complex) / 2.0
    rng = np.random.default_rng(9)
    n = 200_000
    hits = sum(
        node.readout_sample(rho, "z", 160.0, params, rng).retrieved for _ in range(n)
    )
    p_expected = 0.5 / math.e
    sigma = math.sqrt(p_expected * (1 - p_expected) / n)
    assert abs(hits / n - p_expected) < 4.0 * sigma


def test_readout_snr_tracks_retrieval():
    params = NodeParams()
    probs = node.readout_probabilities(
        np.eye(2, dtype=complex) / 2.0, "z", 99.25, params, detector_efficiency=0.65
    )
    snr = (probs["down"] + probs["up"]) / probs["noise"]
    assert 400.0 <= snr <= 800.0
    probs0 = node.readout_probabilities(
        np.eye(2, dtype=complex) / 2.0, "z", 0.0, params, detector_efficiency=0.65
    )
    assert (probs0["down"] + probs0["up"]) / probs0["noise"] == pytest.approx(750.0, rel=1e-6)


def test_pole_and_superposition_visibilities_match_for_clean_bell():
    # Bell-state symmetry: pole correlations equal equatorial correlations.
    st = node.initial_state(NodeParams(p_exc=0.0))
    zz = np.kron(np.diag([1.0, -1.0]), np.diag([1.0, -1.0]))
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    xx = np.kron(sx, sx)
    assert np.trace(st.rho @ zz).real == pytest.approx(np.trace(st.rho @ xx).real, abs=1e-12)


def test_two_qubit_state_validation():
    bad = TwoQubitState(np.eye(4) * 0.3)
    with pytest.raises(node.StateError):
        bad.validate()
    good = TwoQubitState(np.eye(4) / 4.0)
    good.validate()
    with pytest.raises(node.StateError):
        TwoQubitState(np.eye(3))
