"""Long-fiber transmission: attenuation, delay, drift, and compensation.

Polarization drift of the spooled fiber is modeled as a slow random walk on
SU(2).  The compensation loop launches two reference polarizations (V and D)
through the link, measures their Poincare-sphere positions, and gradient
descends three retarder angles until both are restored; two non-orthogonal
references pin the channel to the identity up to a global phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polarization import (
    D_STATE,
    V_STATE,
    JonesVector,
    from_array,
    jones_to_stokes,
    reorthonormalize,
    rotation_unitary,
    waveplate,
)


@dataclass
class FiberParams:
    length_km: float = 20.0
    atten_db_per_km: float = 0.2
    delay_us_per_km: float = 4.90
    delay_offset_us: float = 1.15   # folds in converter and trigger electronics
    drift_step_sigma_rad: float = 0.0
    drift_interval_s: float = 60.0

    def validate(self) -> None:
        if self.length_km < 0.0:
            raise ValueError("length_km must be non-negative")
        if self.atten_db_per_km < 0.0:
            raise ValueError("atten_db_per_km must be non-negative")
        if self.delay_us_per_km < 0.0 or self.delay_offset_us < 0.0:
            raise ValueError("delay coefficients must be non-negative")
        if self.drift_step_sigma_rad < 0.0 or self.drift_interval_s <= 0.0:
            raise ValueError("invalid drift parameters")


def transmittance(length_km, atten_db_per_km: float = 0.2):
    """Power transmission 10^(-attenuation * length / 10)."""
    length = np.asarray(length_km, dtype=float)
    if np.any(length < 0.0):
        raise ValueError("length must be non-negative")
    out = 10.0 ** (-atten_db_per_km * length / 10.0)
    return float(out) if np.isscalar(length_km) else out


def propagation_delay(length_km: float, params: FiberParams) -> float:
    """Single-trip readout delay: affine in fiber length."""
    if length_km < 0.0:
        raise ValueError("length must be non-negative")
    return params.delay_offset_us + params.delay_us_per_km * length_km


def fit_delay_coefficients(lengths_km, delays_us) -> tuple[float, float]:
    """Least-squares (slope us/km, offset us) through measured readout delays."""
    slope, offset = np.polyfit(np.asarray(lengths_km, float), np.asarray(delays_us, float), 1)
    return float(slope), float(offset)


@dataclass
class CompensationState:
    """Current fiber drift, compensator setting, and loop bookkeeping."""

    fiber_unitary: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    compensator_angles: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_error: float = 0.0
    reference_rate_hz: float = 10.0


def drift_step(state: CompensationState, params: FiberParams, rng: np.random.Generator) -> CompensationState:
    """Advance the fiber unitary by one small random rotation.

    Per-axis rotation angles are N(0, sigma); the product is re-orthonormalized
    so the unitary stays clean over millions of steps.
    """
    sigma = params.drift_step_sigma_rad
    if sigma == 0.0:
        return CompensationState(
            state.fiber_unitary.copy(),
            state.compensator_angles.copy(),
            state.last_error,
            state.reference_rate_hz,
        )
    vec = rng.normal(0.0, sigma, size=3)
    angle = float(np.linalg.norm(vec))
    if angle == 0.0:
        rot = np.eye(2, dtype=complex)
    else:
        rot = rotation_unitary(vec / angle, angle)
    u = reorthonormalize(rot @ state.fiber_unitary)
    return CompensationState(u, state.compensator_angles.copy(), state.last_error, state.reference_rate_hz)


def compensator_unitary(angles) -> np.ndarray:
    """Quarter-half-quarter retarder stack; spans SU(2) up to global phase."""
    q1, h, q2 = (float(a) for a in angles)
    return waveplate("quarter", q2) @ waveplate("half", h) @ waveplate("quarter", q1)


_REFERENCES = (V_STATE, D_STATE)
_REFERENCE_POINTS = tuple(jones_to_stokes(s).poincare() for s in _REFERENCES)


def compensation_objective(comp_angles, fiber_unitary: np.ndarray) -> float:
    """Sum of squared Poincare distances of both references from themselves."""
    chan = compensator_unitary(comp_angles) @ fiber_unitary
    total = 0.0
    for ref, target in zip(_REFERENCES, _REFERENCE_POINTS):
        out = from_array(chan @ ref.as_array())
        total += float(np.sum((jones_to_stokes(out).poincare() - target) ** 2))
    return total


@dataclass
class CompensationReport:
    converged: bool
    iterations: int
    objective: float


def _best_probe(fiber_u, angles, f, rng, n_probes=16):
    """Keep the current angles or jump to the best of a few probed triples."""
    best_angles, best_f = angles, f
    for _ in range(n_probes):
        trial = rng.uniform(-math.pi, math.pi, size=3)
        f_trial = compensation_objective(trial, fiber_u)
        if f_trial < best_f:
            best_angles, best_f = trial, f_trial
    return best_angles, best_f


def compensate(
    state: CompensationState,
    max_iters: int = 500,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
    fd_step: float = 1e-3,
) -> tuple[CompensationState, CompensationReport]:
    """Minimize the reference error over the three compensator angles.

    The loop only sees the measurable objective, like the physical feedback:
    it probes a handful of retarder settings to pick a starting point, then
    runs central-difference gradient descent with a backtracking step size.
    If the step collapses away from the tolerance (a saddle of the angle
    parameterization), the angles are re-seeded from fresh probes, all within
    the same iteration budget.  Non-convergence is reported, not raised.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    angles = np.asarray(state.compensator_angles, dtype=float).copy()
    fiber = state.fiber_unitary
    f = compensation_objective(angles, fiber)
    iterations = 0
    if f >= tol:
        angles, f = _best_probe(fiber, angles, f, rng)
    lr = 1.0
    while f >= tol and iterations < max_iters:
        iterations += 1
        grad = np.empty(3)
        curv = np.empty(3)
        for k in range(3):
            probe = angles.copy()
            probe[k] += fd_step
            hi = compensation_objective(probe, fiber)
            probe[k] -= 2.0 * fd_step
            lo = compensation_objective(probe, fiber)
            grad[k] = (hi - lo) / (2.0 * fd_step)
            curv[k] = (hi - 2.0 * f + lo) / fd_step**2
        # Scale each component by its own curvature: near chart
        # singularities of the retarder parameterization the gradient and
        # the curvature collapse together, so the quotient keeps the step
        # well sized where plain descent crawls.
        scale = np.maximum(np.abs(curv), max(1e-4 * float(np.abs(curv).max()), 1e-9))
        direction = -grad / scale
        stepped = False
        if float(np.linalg.norm(grad)) > 1e-14:
            while lr > 1e-10:
                trial = angles + lr * direction
                f_trial = compensation_objective(trial, fiber)
                if f_trial < f:
                    angles, f = trial, f_trial
                    lr = min(lr * 2.0, 2.0)
                    stepped = True
                    break
                lr *= 0.5
        if not stepped:
            # Stuck on a flat spot or saddle: re-seed and keep iterating.
            angles, f = _best_probe(fiber, rng.uniform(-math.pi, math.pi, size=3),
                                    math.inf, rng)
            lr = 1.0
    new_state = CompensationState(
        fiber_unitary=fiber.copy(),
        compensator_angles=angles,
        last_error=f,
        reference_rate_hz=state.reference_rate_hz,
    )
    return new_state, CompensationReport(converged=f < tol, iterations=iterations, objective=f)


def compensated_channel(state: CompensationState) -> np.ndarray:
    return compensator_unitary(state.compensator_angles) @ state.fiber_unitary


def process_fidelity(u: np.ndarray, v: np.ndarray = None) -> float:
    """|Tr(u^dag v)|^2 / 4: unit when the channels match up to global phase."""
    if v is None:
        v = np.eye(2, dtype=complex)
    return float(abs(np.trace(u.conj().T @ v)) ** 2) / 4.0


@dataclass
class CompensationSchedule:
    enabled: bool = True
    period_s: float = 300.0
    dead_s: float = 2.0
    reference_rate_hz: float = 10.0

    def validate(self) -> None:
        if self.period_s <= 0.0 or self.dead_s < 0.0:
            raise ValueError("invalid compensation schedule")
        if self.reference_rate_hz <= 0.0:
            raise ValueError("reference_rate_hz must be positive")

    def duty_factor(self) -> float:
        """Fraction of wall-clock time left for data taking."""
        if not self.enabled:
            return 1.0
        return self.period_s / (self.period_s + self.dead_s)
