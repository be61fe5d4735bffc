"""Polarization-qubit math shared by every other module.

Conventions (fixed here, used everywhere):

* The canonical storage basis is circular: a Jones vector holds the
  amplitudes ``(aL, aR)`` of the left-circular and right-circular
  components.  Linear states are derived from it via

      |H> = (|L> + |R>)/sqrt(2)        |V> = -i (|L> - |R>)/sqrt(2)
      |D> = (|H> + |V>)/sqrt(2)        |A> = (|H> - |V>)/sqrt(2)

* Stokes parameters of ``(aL, aR)``:

      s0 = |aL|^2 + |aR|^2       s1 = 2 Re(conj(aL) aR)
      s2 = 2 Im(conj(aL) aR)     s3 = |aL|^2 - |aR|^2

  so |H> -> (1, 1, 0, 0), |D> -> (1, 0, 1, 0) and |L> -> (1, 0, 0, 1).

* Waveplates are the standard retarders with fast axis at ``axis_angle``
  (radians) in the H/V basis, conjugated into the circular basis.  Global
  phases are unobservable; state comparisons ignore them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNITARY_ATOL = 1e-12

# Column k of LIN_TO_CIRC is the k-th linear basis state expressed in the
# circular basis: converts (aH, aV) components to (aL, aR).
LIN_TO_CIRC = np.array([[1.0, -1.0j], [1.0, 1.0j]]) / math.sqrt(2.0)
CIRC_TO_LIN = LIN_TO_CIRC.conj().T


@dataclass(frozen=True)
class JonesVector:
    """Polarization state amplitudes in the circular {L, R} basis."""

    aL: complex
    aR: complex

    def as_array(self) -> np.ndarray:
        return np.array([self.aL, self.aR], dtype=complex)

    def norm_sq(self) -> float:
        return abs(self.aL) ** 2 + abs(self.aR) ** 2

    def is_normalized(self, atol: float = 1e-12) -> bool:
        return abs(self.norm_sq() - 1.0) <= atol

    def normalized(self) -> "JonesVector":
        n = math.sqrt(self.norm_sq())
        if n == 0.0:
            raise ValueError("cannot normalize a zero Jones vector")
        return JonesVector(self.aL / n, self.aR / n)

    def linear_components(self) -> np.ndarray:
        """Amplitudes (aH, aV) in the linear basis."""
        return CIRC_TO_LIN @ self.as_array()


@dataclass(frozen=True)
class StokesVector:
    s0: float
    s1: float
    s2: float
    s3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2, self.s3])

    def poincare(self) -> np.ndarray:
        """Normalized (s1, s2, s3) point on the Poincare sphere."""
        if self.s0 <= 0.0:
            raise ValueError("s0 must be positive to normalize")
        return np.array([self.s1, self.s2, self.s3]) / self.s0

    def purity(self) -> float:
        return self.s1**2 + self.s2**2 + self.s3**2


def from_array(a) -> JonesVector:
    a = np.asarray(a, dtype=complex).reshape(2)
    return JonesVector(complex(a[0]), complex(a[1]))


def from_linear(aH: complex, aV: complex) -> JonesVector:
    return from_array(LIN_TO_CIRC @ np.array([aH, aV], dtype=complex))


# Named states, all normalized.
L_STATE = JonesVector(1.0, 0.0)
R_STATE = JonesVector(0.0, 1.0)
H_STATE = from_linear(1.0, 0.0)
V_STATE = from_linear(0.0, 1.0)
D_STATE = from_linear(1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))
A_STATE = from_linear(1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0))


def jones_to_stokes(j: JonesVector) -> StokesVector:
    cross = np.conj(j.aL) * j.aR
    return StokesVector(
        s0=abs(j.aL) ** 2 + abs(j.aR) ** 2,
        s1=2.0 * cross.real,
        s2=2.0 * cross.imag,
        s3=abs(j.aL) ** 2 - abs(j.aR) ** 2,
    )


def is_unitary(u: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    u = np.asarray(u)
    return bool(np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol, rtol=0.0))


def _hwp_linear(theta: float) -> np.ndarray:
    c, s = math.cos(2.0 * theta), math.sin(2.0 * theta)
    return np.array([[c, s], [s, -c]], dtype=complex)


def _qwp_linear(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [c * c + 1.0j * s * s, (1.0 - 1.0j) * s * c],
            [(1.0 - 1.0j) * s * c, s * s + 1.0j * c * c],
        ],
        dtype=complex,
    )


def waveplate(kind: str, axis_angle: float) -> np.ndarray:
    """Retarder unitary in the circular basis; ``kind`` is 'half' or 'quarter'."""
    if kind == "half":
        u_lin = _hwp_linear(axis_angle)
    elif kind == "quarter":
        u_lin = _qwp_linear(axis_angle)
    else:
        raise ValueError(f"unknown waveplate kind {kind!r}")
    return LIN_TO_CIRC @ u_lin @ CIRC_TO_LIN


def rotation_unitary(axis, angle: float) -> np.ndarray:
    """SU(2) rotation exp(-i angle (n . sigma)/2) about Poincare axis ``n``."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    sy = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    ndots = n[0] * sx + n[1] * sy + n[2] * sz
    return math.cos(angle / 2.0) * np.eye(2) - 1.0j * math.sin(angle / 2.0) * ndots


@dataclass(frozen=True)
class AnalyzerSetting:
    """Waveplate stack in front of a polarizing beam splitter.

    The photon passes the quarter-wave plate first (if present), then the
    half-wave plate, then the PBS.  ``port`` selects which PBS output the
    detector sits on: 'transmit' projects on H at the PBS, 'reflect' on V.
    Angles are in degrees, matching motorized-mount readouts.
    """

    hwp_deg: float = 0.0
    qwp_deg: float | None = None
    port: str = "transmit"

    def unitary(self) -> np.ndarray:
        u = waveplate("half", math.radians(self.hwp_deg))
        if self.qwp_deg is not None:
            u = u @ waveplate("quarter", math.radians(self.qwp_deg))
        return u

    def port_state(self) -> JonesVector:
        if self.port == "transmit":
            return H_STATE
        if self.port == "reflect":
            return V_STATE
        raise ValueError(f"unknown PBS port {self.port!r}")


def projector(setting: AnalyzerSetting) -> np.ndarray:
    """Rank-1 projector U^dag |port><port| U implemented by an analyzer."""
    u = setting.unitary()
    port = setting.port_state().as_array()
    ket = u.conj().T @ port
    return np.outer(ket, ket.conj())


def states_equal_up_to_phase(a: JonesVector, b: JonesVector, atol: float = 1e-10) -> bool:
    ov = abs(np.vdot(a.as_array(), b.as_array())) ** 2
    return abs(ov - a.norm_sq() * b.norm_sq()) <= atol


def state_fidelity(a: JonesVector, b: JonesVector) -> float:
    """|<a|b>|^2 for normalized pure states (global phase irrelevant)."""
    return float(abs(np.vdot(a.as_array(), b.as_array())) ** 2)


def random_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-random 2x2 unitary (Ginibre matrix followed by QR)."""
    z = rng.normal(size=(2, 2)) + 1.0j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def reorthonormalize(u: np.ndarray) -> np.ndarray:
    """Project a near-unitary 2x2 matrix back onto the unitary group."""
    w, _, vh = np.linalg.svd(u)
    return w @ vh
