"""Atomic-ensemble memory node.

State conventions: the joint state of the memory qubit and the emitted
photon lives on the basis {|down>, |up>} (x) {|L>, |R>}, index ordering
``2*atom + photon``.  The ideal emission is the maximally entangled pair

    (|down, L> + |up, R>) / sqrt(2)

Superposition-basis atomic states follow the mapping used by the readout
transfer pulse: |down>_x = (|down> + |up>)/sqrt(2) and
|up>_x = (|down> - |up>)/sqrt(2).  The transfer rotation is a quarter turn
about the -y axis of the atomic Bloch sphere, which sends |down>_x to
|down> and |up>_x to |up> exactly (axis choice documented here; any fixed
axis consistent with that mapping would do).

Times are microseconds, fields milligauss, Zeeman rates MHz/G throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ATOL_HERMITIAN = 1e-10
ATOL_TRACE = 1e-10
ATOL_PSD = -1e-10

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

BELL_KET = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / math.sqrt(2.0)


class StateError(ValueError):
    """Raised when a density matrix violates its invariants."""


@dataclass
class TwoQubitState:
    """4x4 density matrix of the memory qubit (x) photon polarization qubit."""

    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.shape != (4, 4):
            raise StateError(f"expected a 4x4 matrix, got {self.rho.shape}")

    @classmethod
    def bell_pair(cls) -> "TwoQubitState":
        return cls(np.outer(BELL_KET, BELL_KET.conj()))

    def validate(self) -> None:
        if not np.allclose(self.rho, self.rho.conj().T, atol=ATOL_HERMITIAN, rtol=0.0):
            raise StateError("density matrix is not Hermitian")
        tr = np.trace(self.rho).real
        if abs(tr - 1.0) > ATOL_TRACE:
            raise StateError(f"trace is {tr}, expected 1")
        min_eig = float(np.linalg.eigvalsh((self.rho + self.rho.conj().T) / 2.0).min())
        if min_eig < ATOL_PSD:
            raise StateError(f"density matrix has negative eigenvalue {min_eig}")

    def copy(self) -> "TwoQubitState":
        return TwoQubitState(self.rho.copy())

    def apply_atom_unitary(self, u: np.ndarray) -> "TwoQubitState":
        full = np.kron(u, np.eye(2))
        return TwoQubitState(full @ self.rho @ full.conj().T)

    def apply_photon_unitary(self, u: np.ndarray) -> "TwoQubitState":
        full = np.kron(np.eye(2), u)
        return TwoQubitState(full @ self.rho @ full.conj().T)

    def apply_photon_operator(self, k: np.ndarray) -> np.ndarray:
        """Unnormalized (I (x) K) rho (I (x) K)^dag for a 2x2 photon operator."""
        full = np.kron(np.eye(2), k)
        return full @ self.rho @ full.conj().T

    def photon_event_probability(self, k: np.ndarray) -> float:
        return float(np.trace(self.apply_photon_operator(k)).real)

    def conditional_atom_state(self, k: np.ndarray) -> tuple[np.ndarray, float]:
        """Atom state conditioned on the photon operator K firing.

        Returns (2x2 normalized atom density matrix, event probability).
        """
        joint = self.apply_photon_operator(k)
        reduced = joint.reshape(2, 2, 2, 2).trace(axis1=1, axis2=3)
        p = float(np.trace(reduced).real)
        if p <= 0.0:
            raise StateError("conditioning on a zero-probability photon event")
        return reduced / p, p

    def atom_marginal(self) -> np.ndarray:
        return self.rho.reshape(2, 2, 2, 2).trace(axis1=1, axis2=3)

    def fidelity_with_bell(self) -> float:
        return float((BELL_KET.conj() @ self.rho @ BELL_KET).real)


def atom_bloch(rho_atom: np.ndarray) -> np.ndarray:
    """Bloch vector (x, y, z) of a 2x2 atomic density matrix."""
    return np.array(
        [
            2.0 * rho_atom[0, 1].real,
            -2.0 * rho_atom[0, 1].imag,
            (rho_atom[0, 0] - rho_atom[1, 1]).real,
        ]
    )


@dataclass
class NodeParams:
    """Memory-node parameters; defaults follow the characterized hardware."""

    p_exc: float = 0.01                # single-excitation probability per trial
    eta0: float = 0.50                 # initial internal retrieval efficiency
    tau_mem_us: float = 160.0          # 1/e retrieval lifetime
    decay_shape: str = "gaussian"      # 'gaussian' or 'exponential'
    b_guide_mg: float = 127.5          # guiding field along z
    gf_rate_mhz_per_g: float = 0.6996  # Zeeman rate per unit field, delta-m = 1
    raman_error_rad: float = 0.0       # transfer-pulse rotation-angle error
    phase_jitter_sigma_rad: float = 0.0  # per-trial phase jitter at jitter_ref_us
    jitter_ref_us: float = 100.0
    eta_down: float = 1.0              # relative retrieval weight for |down>
    eta_up: float = 1.0                # relative retrieval weight for |up>
    coherence_tau_us: float = math.inf  # atomic-coherence 1/e time
    pump_init_eff: float = 0.90        # state-initialization efficiency (informational;
                                       # the measured p_exc already includes it)
    readout_snr_factor: float = 1500.0  # read-out SNR per unit retrieval efficiency
    multi_excitation_coeff: float = 2.0  # white-noise weight w = coeff * p_exc
    mod_amplitude: float = 0.0         # residual-field oscillation on the decay curve
    mod_period_us: float = 5.6
    od_decay_fraction: float = 0.0     # linear loss of eta0 across one experiment phase

    def validate(self) -> None:
        if not 0.0 <= self.p_exc < 0.2:
            raise ValueError(f"p_exc {self.p_exc} outside [0, 0.2)")
        if not 0.0 < self.eta0 <= 1.0:
            raise ValueError(f"eta0 {self.eta0} outside (0, 1]")
        if self.tau_mem_us <= 0.0:
            raise ValueError("tau_mem_us must be positive")
        if self.decay_shape not in ("gaussian", "exponential"):
            raise ValueError(f"unknown decay_shape {self.decay_shape!r}")
        for name in ("eta_down", "eta_up", "pump_init_eff"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} {v} outside (0, 1]")
        if self.coherence_tau_us <= 0.0:
            raise ValueError("coherence_tau_us must be positive")
        if self.phase_jitter_sigma_rad < 0.0 or self.jitter_ref_us <= 0.0:
            raise ValueError("invalid phase jitter parameters")
        if self.readout_snr_factor <= 0.0:
            raise ValueError("readout_snr_factor must be positive")
        if self.multi_excitation_coeff < 0.0:
            raise ValueError("multi_excitation_coeff must be non-negative")
        if abs(self.mod_amplitude) >= 1.0 or self.mod_period_us <= 0.0:
            raise ValueError("mod_amplitude must be below 1 and mod_period_us positive")
        if not 0.0 <= self.od_decay_fraction < 1.0:
            raise ValueError(f"od_decay_fraction {self.od_decay_fraction} outside [0, 1)")


def multi_excitation_weight(params: NodeParams) -> float:
    """White-noise admixture weight w of the emitted pair.

    Modeled as w = coeff * p_exc: for a pair source with thermal photon-number
    statistics, double emissions occur at rate p_exc^2 relative to p_exc, are
    twice as likely to herald (two photons), and leave the heralded pair in a
    maximally mixed state because the extra excitation is unpolarized and
    uncorrelated.  In the low-gain limit that fraction tends to 2*p_exc, hence
    the default coefficient of 2.
    """
    return min(1.0, params.multi_excitation_coeff * params.p_exc)


def initial_state(params: NodeParams) -> TwoQubitState:
    """Heralded memory-photon pair state including multi-excitation noise."""
    params.validate()
    w = multi_excitation_weight(params)
    bell = TwoQubitState.bell_pair().rho
    rho = (1.0 - w) * bell + w * np.eye(4) / 4.0
    return TwoQubitState(rho)


def retrieval_efficiency(t_us: float, params: NodeParams) -> float:
    """Internal retrieval efficiency after a storage time of ``t_us``.

    Both decay shapes are anchored to the same 1/e point at tau_mem_us.  The
    optional multiplicative modulation models residual-field oscillations on
    the decay curve (amplitude 0 by default).
    """
    t = np.asarray(t_us, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("storage time must be non-negative")
    x = t / params.tau_mem_us
    if params.decay_shape == "gaussian":
        base = params.eta0 * np.exp(-(x**2))
    else:
        base = params.eta0 * np.exp(-x)
    if params.mod_amplitude != 0.0:
        base = base * (
            1.0 + params.mod_amplitude * np.cos(2.0 * math.pi * t / params.mod_period_us)
        )
    out = np.clip(base, 0.0, 1.0)
    return float(out) if np.isscalar(t_us) else out


def larmor_frequency_mhz(params: NodeParams) -> float:
    """Precession frequency of the delta-m = 2 atomic coherence."""
    return 2.0 * params.gf_rate_mhz_per_g * params.b_guide_mg * 1e-3


def larmor_period_us(params: NodeParams) -> float:
    return 1.0 / larmor_frequency_mhz(params)


def larmor_phase(t_us, params: NodeParams):
    """Relative phase accumulated between |up> and |down> after ``t_us``."""
    phi = 2.0 * math.pi * larmor_frequency_mhz(params) * np.asarray(t_us, dtype=float)
    return float(phi) if np.isscalar(t_us) else phi


def coherence_factor(t_us, params: NodeParams):
    """Atomic-coherence damping factor; exponential so storage composes."""
    if math.isinf(params.coherence_tau_us):
        out = np.ones_like(np.asarray(t_us, dtype=float))
    else:
        out = np.exp(-np.asarray(t_us, dtype=float) / params.coherence_tau_us)
    return float(out) if np.isscalar(t_us) else out


def phase_rotation_unitary(phi: float) -> np.ndarray:
    """Atomic unitary putting relative phase ``phi`` on |up> versus |down>."""
    return np.array([[1.0, 0.0], [0.0, np.exp(1.0j * phi)]], dtype=complex)


def apply_memory_channel(
    rho: TwoQubitState,
    t_us: float,
    params: NodeParams,
    rng: Optional[np.random.Generator] = None,
) -> TwoQubitState:
    """Storage for ``t_us``: precession, coherence damping, optional jitter.

    The deterministic part is the guiding-field phase rotation plus phase
    damping of the atomic coherence.  When ``rng`` is given a per-trial
    Gaussian phase kick of width sigma * t / t_ref is added, sampling the
    shot-to-shot field noise.
    """
    rho.validate()
    if t_us < 0.0:
        raise ValueError("storage time must be non-negative")
    phi = float(larmor_phase(t_us, params))
    if rng is not None and params.phase_jitter_sigma_rad > 0.0:
        phi += rng.normal(0.0, params.phase_jitter_sigma_rad * t_us / params.jitter_ref_us)
    out = rho.apply_atom_unitary(phase_rotation_unitary(phi))
    lam = float(coherence_factor(t_us, params))
    if lam < 1.0:
        # Phase damping on the atom: off-diagonal atom blocks scale by lam.
        m = out.rho.reshape(2, 2, 2, 2)
        m[0, :, 1, :] *= lam
        m[1, :, 0, :] *= lam
        out = TwoQubitState(m.reshape(4, 4))
    return out


def raman_unitary(error_rad: float = 0.0) -> np.ndarray:
    """Transfer-pulse unitary: rotation by pi/2 + error about the -y axis."""
    a = math.pi / 2.0 + error_rad
    c, s = math.cos(a / 2.0), math.sin(a / 2.0)
    # exp(+i a sigma_y / 2)
    return np.array([[c, s], [-s, c]], dtype=complex)


def raman_transfer(rho: TwoQubitState, error_rad: float = 0.0) -> TwoQubitState:
    """Map the atomic superposition basis onto the measurement eigenbasis."""
    rho.validate()
    return rho.apply_atom_unitary(raman_unitary(error_rad))


def raman_bloch_matrix(error_rad: float = 0.0) -> np.ndarray:
    """3x3 Bloch-vector rotation equivalent to :func:`raman_unitary`."""
    a = math.pi / 2.0 + error_rad
    c, s = math.cos(a), math.sin(a)
    # Rotation about -y by a: x -> x c - z s is inverted; see unitary above.
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


@dataclass
class ReadoutResult:
    outcome: Optional[str]      # 'down', 'up', or None when nothing fired
    retrieved: bool
    noise_click: bool


def readout_probabilities(
    rho_atom: np.ndarray,
    basis: str,
    delay_us: float,
    params: NodeParams,
    detector_efficiency: float = 1.0,
) -> dict:
    """Analytic click probabilities for a heralded readout.

    Retrieval succeeds with probability eta(delay) scaled by the per-state
    weights, the outcome follows the Born rule after the optional basis
    transfer, and a noise click lands in the signal window with probability
    detector_efficiency / readout_snr_factor (so the in-window SNR equals
    readout_snr_factor times the retrieval efficiency by construction).
    """
    if basis not in ("z", "x"):
        raise ValueError(f"unknown readout basis {basis!r}")
    rho = np.asarray(rho_atom, dtype=complex)
    if basis == "x":
        u = raman_unitary(params.raman_error_rad)
        rho = u @ rho @ u.conj().T
    p_down_state = float(rho[0, 0].real)
    eta = retrieval_efficiency(delay_us, params)
    p_down = eta * params.eta_down * p_down_state * detector_efficiency
    p_up = eta * params.eta_up * (1.0 - p_down_state) * detector_efficiency
    p_noise = detector_efficiency / params.readout_snr_factor
    return {"down": p_down, "up": p_up, "noise": p_noise}


def readout_sample(
    rho_atom: np.ndarray,
    basis: str,
    delay_us: float,
    params: NodeParams,
    rng: np.random.Generator,
    detector_efficiency: float = 1.0,
) -> ReadoutResult:
    """Sample one heralded readout; see :func:`readout_probabilities`."""
    probs = readout_probabilities(rho_atom, basis, delay_us, params, detector_efficiency)
    r = rng.random()
    if r < probs["down"]:
        outcome, retrieved = "down", True
    elif r < probs["down"] + probs["up"]:
        outcome, retrieved = "up", True
    else:
        outcome, retrieved = None, False
    noise = bool(rng.random() < probs["noise"])
    if outcome is None and noise:
        outcome = "down" if rng.random() < 0.5 else "up"
    return ReadoutResult(outcome=outcome, retrieved=retrieved, noise_click=noise)
