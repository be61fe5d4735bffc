import math

import numpy as np
import pytest

from qmemlink import fiber
from qmemlink import polarization as pol

# Measured single-trip readout delays used to pin the default coefficients.
DELAY_POINTS = [(0.01, 1.10), (5.0, 25.65), (10.0, 50.15), (20.0, 99.25)]


def test_transmittance_values():
    assert fiber.transmittance(0.0) == 1.0
    assert fiber.transmittance(20.0, 0.2) == pytest.approx(10.0 ** (-0.4), abs=1e-12)
    assert fiber.transmittance(100.0, 0.2) == pytest.approx(0.01, abs=1e-12)


def test_transmittance_multiplicative():
    rng = np.random.default_rng(20)
    for _ in range(20):
        l1, l2 = rng.uniform(0.0, 60.0, size=2)
        assert fiber.transmittance(l1 + l2) == pytest.approx(
            fiber.transmittance(l1) * fiber.transmittance(l2), abs=1e-12
        )


def _normal_equation_fit(points):
    # Independent affine LS oracle: explicit normal equations.
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    n = len(xs)
    sx, sy = xs.sum(), ys.sum()
    sxx, sxy = (xs * xs).sum(), (xs * ys).sum()
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    offset = (sy - slope * sx) / n
    return slope, offset


def test_fit_delay_coefficients_against_normal_equations():
    lengths = [p[0] for p in DELAY_POINTS]
    delays = [p[1] for p in DELAY_POINTS]
    slope, offset = fiber.fit_delay_coefficients(lengths, delays)
    o_slope, o_offset = _normal_equation_fit(DELAY_POINTS)
    assert slope == pytest.approx(o_slope, abs=1e-9)
    assert offset == pytest.approx(o_offset, abs=1e-9)
    assert slope == pytest.approx(4.90, abs=0.02)
    assert offset == pytest.approx(1.15, abs=0.10)
    for length, measured in DELAY_POINTS:
        assert abs(offset + slope * length - measured) < 0.35


def test_propagation_delay_affine_and_default():
    params = fiber.FiberParams()
    assert fiber.propagation_delay(0.0, params) == params.delay_offset_us
    assert fiber.propagation_delay(20.0, params) == pytest.approx(99.25, abs=0.35)
    a = fiber.propagation_delay(7.0, params)
    b = fiber.propagation_delay(13.0, params)
    assert fiber.propagation_delay(10.0, params) == pytest.approx((a + b) / 2.0, abs=1e-12)


def test_drift_step_zero_sigma_is_identity():
    state = fiber.CompensationState()
    rng = np.random.default_rng(21)
    out = fiber.drift_step(state, fiber.FiberParams(drift_step_sigma_rad=0.0), rng)
    assert np.array_equal(out.fiber_unitary, np.eye(2))


def test_drift_stays_unitary_over_many_steps():
    params = fiber.FiberParams(drift_step_sigma_rad=0.02)
    rng = np.random.default_rng(22)
    state = fiber.CompensationState()
    for _ in range(1_000_000):
        state = fiber.drift_step(state, params, rng)
    assert pol.is_unitary(state.fiber_unitary, atol=1e-10)


def _rotation_angle(u: np.ndarray) -> float:
    return 2.0 * math.acos(min(1.0, abs(np.trace(u)) / 2.0))


def test_drift_is_diffusive():
    params = fiber.FiberParams(drift_step_sigma_rad=0.01)
    rng = np.random.default_rng(23)

    def var_after(steps, walkers=200):
        angles = []
        for _ in range(walkers):
            st = fiber.CompensationState()
            for _ in range(steps):
                st = fiber.drift_step(st, params, rng)
            angles.append(_rotation_angle(st.fiber_unitary) ** 2)
        return np.mean(angles)

    v100 = var_after(100)
    v400 = var_after(400)
    assert 2.5 < v400 / v100 < 5.5


def _stokes_objective_oracle(comp_angles, fiber_u):
    # Independent reimplementation: explicit Stokes components.
    chan = fiber.compensator_unitary(comp_angles) @ fiber_u
    total = 0.0
    for ref in (pol.V_STATE, pol.D_STATE):
        vec = chan @ ref.as_array()
        aL, aR = vec
        cross = np.conj(aL) * aR
        s = np.array([2 * cross.real, 2 * cross.imag, abs(aL) ** 2 - abs(aR) ** 2])
        s_ref = pol.jones_to_stokes(ref).poincare()
        total += float(np.sum((s - s_ref) ** 2))
    return total


def test_compensation_objective_values():
    assert fiber.compensation_objective(np.zeros(3), np.eye(2)) == pytest.approx(0.0, abs=1e-24)
    rng = np.random.default_rng(24)
    for _ in range(20):
        u = pol.random_unitary(rng)
        angles = rng.uniform(-math.pi, math.pi, size=3)
        got = fiber.compensation_objective(angles, u)
        assert got >= 0.0
        assert got == pytest.approx(_stokes_objective_oracle(angles, u), abs=1e-12)


def test_compensate_identity_is_instant():
    state = fiber.CompensationState()
    new, report = fiber.compensate(state)
    assert report.converged and report.iterations == 0


def test_compensate_random_unitaries():
    rng = np.random.default_rng(25)
    failures = 0
    for _ in range(100):
        u = pol.random_unitary(rng)
        state = fiber.CompensationState(fiber_unitary=u)
        new, report = fiber.compensate(state, max_iters=500, tol=1e-4, rng=rng)
        if not report.converged or report.iterations > 500:
            failures += 1
            continue
        chan = fiber.compensated_channel(new)
        probe = pol.from_array(chan @ pol.H_STATE.as_array()).normalized()
        assert pol.state_fidelity(probe, pol.H_STATE) > 0.999
        assert fiber.process_fidelity(chan) > 0.999
    assert failures <= 1


def test_compensation_schedule_duty():
    sched = fiber.CompensationSchedule(period_s=300.0, dead_s=2.0)
    assert sched.duty_factor() == pytest.approx(300.0 / 302.0, abs=1e-12)
    off = fiber.CompensationSchedule(enabled=False)
    assert off.duty_factor() == 1.0
