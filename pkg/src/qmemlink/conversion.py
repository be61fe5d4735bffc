"""Frequency-conversion stage: DFG efficiency, loss chain, Sagnac phase lock.

The converter sits inside a Sagnac loop so both polarization arms convert
symmetrically; the pump does not co-propagate with the signal, so the loop
phase must be actively stabilized.  Per-arm external efficiencies here are
defined from the signal input port through the narrowband grating, matching
how the peak values were measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polarization import CIRC_TO_LIN, LIN_TO_CIRC, JonesVector, from_array


@dataclass
class QfcParams:
    """Converter operating point and internal loss breakdown."""

    eta_max_h: float = 0.472       # peak external quantum efficiency, H arm
    eta_max_v: float = 0.485       # peak external quantum efficiency, V arm
    p_peak_w: float = 1.749        # pump power at peak conversion
    pump_power_w: float = 1.749    # operating pump power
    crystal_length_mm: float = 50.0
    noise_rate_cps: float = 250.0  # broadband noise emitted by the converter
    internal_eff: float = 0.945
    coupling_eff: float = 0.892
    optics_eff: float = 0.862
    enabled: bool = True

    @property
    def alpha_nor(self) -> float:
        """Normalized coupling fixed by the peak condition alpha*P*L^2 = (pi/2)^2."""
        return (math.pi / 2.0) ** 2 / (self.p_peak_w * self.crystal_length_mm**2)

    def validate(self) -> None:
        for name in ("eta_max_h", "eta_max_v", "internal_eff", "coupling_eff", "optics_eff"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} {v} outside (0, 1]")
        if self.p_peak_w <= 0.0 or self.crystal_length_mm <= 0.0:
            raise ValueError("p_peak_w and crystal_length_mm must be positive")
        if self.pump_power_w < 0.0:
            raise ValueError("pump_power_w must be non-negative")
        if self.noise_rate_cps < 0.0:
            raise ValueError("noise_rate_cps must be non-negative")


@dataclass
class FilterParams:
    """Filtering stack between the converter output and the detector fiber."""

    flange_fpc_eff: float = 0.915
    etalon_eff: float = 0.749
    vbg_eff: float = 0.977
    bpf_coupling_eff: float = 0.826
    etalon_fwhm_mhz: float = 27.0
    etalon_fsr_ghz: float = 15.0
    vbg_fwhm_ghz: float = 25.0

    def validate(self) -> None:
        for name in ("flange_fpc_eff", "etalon_eff", "vbg_eff", "bpf_coupling_eff"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} {v} outside (0, 1]")
        for name in ("etalon_fwhm_mhz", "etalon_fsr_ghz", "vbg_fwhm_ghz"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


def dfg_efficiency(power_w, arm: str, params: QfcParams):
    """External conversion efficiency versus pump power for one arm.

    eta(P) = eta_max * sin^2(sqrt(alpha_nor * P) * L); the peak condition
    pins the argument to pi/2 at p_peak_w.
    """
    p = np.asarray(power_w, dtype=float)
    if np.any(p < 0.0):
        raise ValueError("pump power must be non-negative")
    eta_max = {"H": params.eta_max_h, "V": params.eta_max_v}[arm]
    out = eta_max * np.sin(np.sqrt(params.alpha_nor * p) * params.crystal_length_mm) ** 2
    return float(out) if np.isscalar(power_w) else out


def converter_eqe(params: QfcParams, arm: str = "V") -> float:
    """Converter-only external efficiency: coupling x optics x internal.

    The stage values were characterized for the V arm; the H arm is scaled so
    its peak matches eta_max_h.
    """
    base = params.coupling_eff * params.optics_eff * params.internal_eff
    if arm == "V":
        return base
    if arm == "H":
        return base * params.eta_max_h / params.eta_max_v
    raise ValueError(f"unknown arm {arm!r}")


def filter_transmission(params: FilterParams, include_bpf_coupling: bool = False) -> float:
    """Filter-module transmission (flange/FPC x etalon x grating).

    ``include_bpf_coupling`` appends the final bandpass-and-coupling stage in
    front of the detector.
    """
    t = params.flange_fpc_eff * params.etalon_eff * params.vbg_eff
    if include_bpf_coupling:
        t *= params.bpf_coupling_eff
    return t


def noise_budget(
    converter_cps: float = 250.0, detector_dark_cps: float = 30.0, **extra_cps: float
) -> dict:
    """Itemized additive noise budget in counts per second."""
    components = {"converter": float(converter_cps), "detector_dark": float(detector_dark_cps)}
    components.update({k: float(v) for k, v in extra_cps.items()})
    return {"components": components, "total_cps": sum(components.values())}


@dataclass
class SagnacGeometry:
    """Interferometer path lengths (meters) and wavevectors (rad/m).

    l1/l2 run from the splitting PBS ports to the crystal center; s1/s2 from
    the cavity end mirrors to the crystal center.  The pump wavevector must
    equal k_signal - k_converted (free-space energy conservation).
    """

    # Defaults describe the locked loop: symmetric arms, zero piezo offset,
    # so both phase differences vanish and conversion preserves polarization.
    l1_m: float = 0.25
    l2_m: float = 0.25
    s1_m: float = 0.20
    s2_m: float = 0.0
    k_signal: float = 2.0 * math.pi / 780e-9
    k_converted: float = 2.0 * math.pi / 1522e-9
    k_pump: float | None = None
    disp_h: float = 0.0
    disp_v: float = 0.0
    disp_m2: float = 0.0
    disp_m3: float = 0.0
    pump_leak_w: float = 1e-3

    def __post_init__(self):
        if self.k_pump is None:
            self.k_pump = self.k_signal - self.k_converted
        self.validate()

    def validate(self) -> None:
        expected = self.k_signal - self.k_converted
        if abs(self.k_pump - expected) > 1e-6 * abs(expected):
            raise ValueError(
                f"k_pump {self.k_pump} violates k_signal - k_converted = {expected}"
            )
        if self.pump_leak_w < 0.0:
            raise ValueError("pump_leak_w must be non-negative")


def arm_phase_h(g: SagnacGeometry) -> float:
    """Output phase of the converted light from the H-input arm."""
    return g.k_signal * g.l2_m - g.k_pump * g.s1_m + g.k_converted * g.l1_m + g.disp_h


def arm_phase_v(g: SagnacGeometry) -> float:
    """Output phase of the converted light from the V-input arm."""
    return (
        g.k_signal * g.l1_m
        - g.k_pump * (g.s1_m + 2.0 * g.s2_m)
        + g.k_converted * g.l2_m
        + g.disp_v
    )


def conversion_phase_difference(g: SagnacGeometry) -> float:
    """Phase difference between the two converted arms at the output.

    Subtracting the per-arm phases, the signal and converted wavevectors
    combine into their difference, i.e. the pump wavevector: the result is
    k_pump * (2 s2 + l2 - l1) plus the dispersion offset.  (A reduction that
    kept the bare signal wavevector as the coefficient would contradict the
    per-arm expressions; tests cross-check against their direct subtraction.)
    """
    return g.k_pump * (2.0 * g.s2_m + (g.l2_m - g.l1_m)) + (g.disp_h - g.disp_v)


def pump_phase_difference(g: SagnacGeometry) -> float:
    """Phase difference of the pump light leaked through the two end mirrors.

    Tracks the conversion phase difference up to a constant dispersion
    offset, which is why the leak can serve as the lock error input.
    """
    return g.k_pump * (2.0 * g.s2_m + (g.l2_m - g.l1_m)) + (g.disp_m3 - g.disp_m2)


def wrap_phase(phi: float) -> float:
    """Map a phase into (-pi, pi]."""
    return float(-((-phi + math.pi) % (2.0 * math.pi)) + math.pi)


def lock_error_signal(g: SagnacGeometry) -> float:
    """Balanced-detector error power: 2 * P_leak * sin(pump phase difference)."""
    if g.pump_leak_w < 0.0:
        raise ValueError("pump_leak_w must be non-negative")
    return 2.0 * g.pump_leak_w * math.sin(pump_phase_difference(g))


@dataclass
class LockGains:
    kp: float = 5e-5   # meters of path correction per watt of error signal
    ki: float = 5e-6

    def validate(self) -> None:
        if self.kp < 0.0 or self.ki < 0.0:
            raise ValueError("lock gains must be non-negative")


@dataclass
class LockState:
    """Piezo path correction plus integrator memory of the PI loop."""

    pzt_m: float = 0.0
    integral: float = 0.0
    drift_m: float = 0.0   # accumulated uncontrolled drift of s2


def locked_geometry(state: LockState, g: SagnacGeometry) -> SagnacGeometry:
    """Geometry with the loop's drift and piezo correction folded into s2."""
    return SagnacGeometry(
        l1_m=g.l1_m,
        l2_m=g.l2_m,
        s1_m=g.s1_m,
        s2_m=g.s2_m + state.drift_m + state.pzt_m,
        k_signal=g.k_signal,
        k_converted=g.k_converted,
        k_pump=g.k_pump,
        disp_h=g.disp_h,
        disp_v=g.disp_v,
        disp_m2=g.disp_m2,
        disp_m3=g.disp_m3,
        pump_leak_w=g.pump_leak_w,
    )


def lock_loop_step(
    state: LockState, g: SagnacGeometry, gains: LockGains, drift_m: float = 0.0
) -> LockState:
    """One discrete PI update of the piezo-controlled path length.

    ``drift_m`` is this step's uncontrolled change of s2.  The correction
    sign pushes the pump phase difference toward 0 mod 2 pi.
    """
    gains.validate()
    new_drift = state.drift_m + drift_m
    eff = locked_geometry(LockState(state.pzt_m, state.integral, new_drift), g)
    err = lock_error_signal(eff)
    integral = state.integral + err
    pzt = state.pzt_m - (gains.kp * err + gains.ki * integral)
    return LockState(pzt_m=pzt, integral=integral, drift_m=new_drift)


def qfc_jones_operator(params: QfcParams, phase_difference: float = 0.0) -> np.ndarray:
    """Photon-side conversion operator in the circular basis.

    Per-arm amplitude attenuation sqrt(eta_arm) at the operating pump power
    with the loop phase difference applied between the linear arms.  Norm of
    the output state is the survival probability through the grating.
    """
    eta_h = dfg_efficiency(params.pump_power_w, "H", params)
    eta_v = dfg_efficiency(params.pump_power_w, "V", params)
    m_lin = np.array(
        [
            [math.sqrt(eta_h) * np.exp(1.0j * phase_difference), 0.0],
            [0.0, math.sqrt(eta_v)],
        ],
        dtype=complex,
    )
    return LIN_TO_CIRC @ m_lin @ CIRC_TO_LIN


@dataclass
class ConvertedPhoton:
    survived: bool
    pol_out: JonesVector | None


def convert_photon(
    pol: JonesVector,
    power_w: float,
    params: QfcParams,
    rng: np.random.Generator,
    phase_difference: float = 0.0,
) -> ConvertedPhoton:
    """Convert one photon: sample survival, return the output polarization."""
    if not pol.is_normalized(atol=1e-9):
        raise ValueError("input polarization must be normalized")
    operating = QfcParams(**{**params.__dict__, "pump_power_w": power_w})
    m = qfc_jones_operator(operating, phase_difference)
    out = m @ pol.as_array()
    p_survive = float(np.vdot(out, out).real)
    if rng.random() >= p_survive:
        return ConvertedPhoton(survived=False, pol_out=None)
    return ConvertedPhoton(survived=True, pol_out=from_array(out / math.sqrt(p_survive)))
