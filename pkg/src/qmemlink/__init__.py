"""Simulator and analysis toolkit for a memory-based quantum-network link.

The package models one fiber link end to end: a cold-atomic-ensemble memory
node that emits a polarization-entangled photon, a polarization-independent
frequency converter with its filtering stack, long-fiber transmission with
automated polarization compensation, single-photon detection, and the
discrete-event duty cycle that ties them together.  Seeded Monte Carlo runs
and closed-form models reproduce visibilities, fidelities, SNR-versus-distance
behavior, and repetition rates.
"""

__version__ = "0.1.0"
