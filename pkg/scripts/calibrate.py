#!/usr/bin/env python3
"""Derive the free noise parameters embedded in the shipped preset configs.

Each derivation inverts the closed-form visibility/SNR model of the link for
one published operating point:

* transfer-pulse rotation error from the ~1.5% local superposition-basis
  visibility drop,
* local excitation probability from the local pole-basis visibility (95.5%),
* coherence time + phase-jitter amplitude from the superposition-basis
  visibility after the 20-km single-trip delay (83.6% at 99.25 us),
* the SNR-model excitation rate from the 100-km operating point (SNR 6.9),
* the systematic visibility allowance from the quoted +-5.7% error at the
  20-km fringe statistics (7353 coincidences).

Run with no arguments to print the values the configs should carry.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from qmemlink.analysis import FringeDataset, fit_fringe, solve_r_exc  # noqa: E402

# Readout-chain constants shared by all presets.
APD_EFF = 0.65
READ_SNR_FACTOR = 1500.0
ETA0 = 0.50
TAU_MEM_US = 160.0
MULTI_EXC_COEFF = 2.0

# Published operating points this calibration inverts.
LOCAL_VZ = 0.955
LOCAL_RAMAN_DROP = 0.985          # x-visibility factor surviving the transfer pulse
LOCAL_DELAY_US = 0.70
LOCAL_DARK_CPS = 50.0
KM20_VX = 0.836
KM20_DELAY_US = 99.25
KM20_P_EXC = 0.015
KM20_SIGMA_V = 0.057              # quoted total error on the 20-km pole visibility
KM20_COINCIDENCES = 7353
COHERENCE_TAU_US = 3000.0         # chosen split: most x-decay comes from jitter
JITTER_REF_US = 100.0
WINDOW_NS = 200.0
QFC_NOISE_CPS = 250.0
SNSPD_DARK_CPS = 30.0
SNSPD_EFF = 0.88
BPF_COUPLING = 0.826
ETA_MAX_H, ETA_MAX_V = 0.472, 0.485
ATTEN_DB_PER_KM = 0.2


def retrieval(t_us: float) -> float:
    return ETA0 * math.exp(-((t_us / TAU_MEM_US) ** 2))


def snr_dilution(t_us: float, p_herald_signal: float, p_herald_noise: float) -> float:
    """Fringe-visibility retention from read noise and noise heralds.

    Noise heralds add no readout-signal coincidences (no spin wave), so they
    enter only through the flat read-noise floor.
    """
    q_read = retrieval(t_us) * APD_EFF
    p_read_noise = APD_EFF / READ_SNR_FACTOR
    ratio = p_herald_noise / p_herald_signal
    return 1.0 / (1.0 + (1.0 + ratio) * p_read_noise / q_read)


def calibrate_local() -> dict:
    """Excitation probability reproducing the local pole-basis visibility."""
    p_exc = 0.02
    for _ in range(8):
        p_hs = p_exc * APD_EFF
        p_hn = 2.0 * LOCAL_DARK_CPS * WINDOW_NS * 1e-9
        k = snr_dilution(LOCAL_DELAY_US, p_hs, p_hn)
        w = 1.0 - LOCAL_VZ / k
        p_exc = w / MULTI_EXC_COEFF
    return {"p_exc": p_exc, "visibility_retention": k}


def km20_herald_terms(p_exc: float) -> tuple:
    fiber_t = 10.0 ** (-ATTEN_DB_PER_KM * 20.0 / 10.0)
    arm_avg = 0.5 * (ETA_MAX_H + ETA_MAX_V)
    p_hs = p_exc * arm_avg * BPF_COUPLING * fiber_t * SNSPD_EFF
    p_hn = 2.0 * (QFC_NOISE_CPS * fiber_t + SNSPD_DARK_CPS) * WINDOW_NS * 1e-9
    return p_hs, p_hn


def calibrate_memory_noise(raman_error: float) -> dict:
    """Coherence time and jitter matching the 20-km superposition visibility."""
    p_hs, p_hn = km20_herald_terms(KM20_P_EXC)
    k20 = snr_dilution(KM20_DELAY_US, p_hs, p_hn)
    w20 = MULTI_EXC_COEFF * KM20_P_EXC
    amplitude = (1.0 - w20) * math.cos(raman_error) * k20
    exponent = math.log(amplitude / KM20_VX)
    jitter_exponent = exponent - KM20_DELAY_US / COHERENCE_TAU_US
    if jitter_exponent < 0.0:
        raise SystemExit("chosen coherence time over-explains the 20-km decay")
    sigma = math.sqrt(2.0 * jitter_exponent) * JITTER_REF_US / KM20_DELAY_US
    return {
        "coherence_tau_us": COHERENCE_TAU_US,
        "phase_jitter_sigma_rad": sigma,
        "predicted_vx_20km": amplitude * math.exp(-exponent),
        "predicted_vz_20km": (1.0 - w20) * k20,
    }


def calibrate_sigma_sys() -> dict:
    """Systematic visibility allowance on top of the Poisson floor.

    Builds the expected (noise-free) 20-km fringe at the published
    statistics, takes the fit's statistical error, and sizes the quadrature
    excess so the reported error matches the published +-5.7%.
    """
    settings = np.array([11.25 * k for k in range(12)])
    mean = KM20_COINCIDENCES / len(settings)
    counts = mean * (1.0 + 0.89 * np.cos(2.0 * math.pi * settings / 90.0))
    est = fit_fringe(FringeDataset(settings, counts), period=90.0)
    stat = est.sigma_stat
    excess = math.sqrt(max(KM20_SIGMA_V**2 - stat**2, 0.0))
    return {"sigma_stat_floor": stat, "visibility_sigma_sys": excess}


def main() -> int:
    raman_error = math.acos(LOCAL_RAMAN_DROP)
    local = calibrate_local()
    memory = calibrate_memory_noise(raman_error)
    sigma = calibrate_sigma_sys()
    r_exc = solve_r_exc(100.0, 6.9)
    out = {
        "raman_error_rad": raman_error,
        "local_p_exc": local["p_exc"],
        "coherence_tau_us": memory["coherence_tau_us"],
        "phase_jitter_sigma_rad": memory["phase_jitter_sigma_rad"],
        "predicted_vz_20km": memory["predicted_vz_20km"],
        "predicted_vx_20km": memory["predicted_vx_20km"],
        "visibility_sigma_sys": sigma["visibility_sigma_sys"],
        "snr_model_r_exc_cps": r_exc,
    }
    print(json.dumps(out, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
