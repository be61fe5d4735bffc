"""Discrete-event engine for the experimental duty cycle.

A session is a sequence of atom loads; each load is a cooling phase followed
by an experiment phase of several rounds of write/window/triggered-read
cycles.  Trials are simulated in vectorized chunks from a single seeded
generator, so a run is reproducible bit for bit and shards with derived
seeds merge into consistent statistics.

Per trial: the node emits the entangled pair with probability p_exc, the
photon side passes the converter operator, the scalar loss chain and the
analyzer, detector and noise clicks are sampled inside the acceptance
window, and a herald triggers the memory readout after the single-trip
delay.  Conditioned atom states and Born probabilities are precomputed per
analyzer setting; only the per-trial precession phase and jitter vary,
handled on Bloch vectors (cross-checked against the density-matrix path in
the test suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from . import node as node_mod
from .conversion import qfc_jones_operator
from .detection import DetectionEvent, Histogram, PulseShape
from .fiber import propagation_delay, transmittance
from .polarization import AnalyzerSetting

if TYPE_CHECKING:
    from .config import LinkConfig

CHUNK_TRIALS = 1_000_000


class ScheduleError(ValueError):
    """Raised when the configured timing cannot fit the duty-cycle budget."""


@dataclass
class SequenceParams:
    cooling_ms: float = 28.6
    experiment_phase_ms: float = 6.0
    rounds: int = 4
    cycles_per_round_cap: int = 250
    pump_us: float = 2.0
    write_ns: float = 50.0
    window_ns: float = 200.0
    read_ns: float = 250.0
    init_pump_us: float = 16.0
    inter_round_us: float = 2.0

    def validate(self) -> None:
        for name in (
            "cooling_ms",
            "experiment_phase_ms",
            "pump_us",
            "write_ns",
            "window_ns",
            "init_pump_us",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.read_ns < 0.0 or self.inter_round_us < 0.0:
            raise ValueError("read_ns and inter_round_us must be non-negative")
        if self.rounds < 1 or self.cycles_per_round_cap < 1:
            raise ValueError(f"rounds {self.rounds} and cap must be at least 1")


@dataclass
class WavepacketParams:
    """Arrival-time shapes of the two photon pulses and the record span."""

    writeout_rise_ns: float = 7.0
    writeout_decay_ns: float = 16.0
    readout_rise_ns: float = 7.0
    readout_decay_ns: float = 16.0
    record_pre_ns: float = 200.0
    record_post_ns: float = 600.0
    window_quantile_lo: float = 0.01
    window_quantile_hi: float = 0.99

    def validate(self) -> None:
        PulseShape(self.writeout_rise_ns, self.writeout_decay_ns).validate()
        PulseShape(self.readout_rise_ns, self.readout_decay_ns).validate()
        if self.record_pre_ns < 0.0 or self.record_post_ns < 0.0:
            raise ValueError("record_pre_ns and record_post_ns must be non-negative")
        if not 0.0 < self.window_quantile_lo < self.window_quantile_hi < 1.0:
            raise ValueError("window_quantile_lo/hi must satisfy 0 < lo < hi < 1")

    def writeout_shape(self) -> PulseShape:
        return PulseShape(self.writeout_rise_ns, self.writeout_decay_ns)

    def readout_shape(self) -> PulseShape:
        return PulseShape(self.readout_rise_ns, self.readout_decay_ns)


@dataclass
class RunParams:
    trials: int = 200_000
    duration_s: float = 0.0            # 0 means: use the trial count
    overhead_fraction: float = 0.0     # extra session dead time beyond the schedule
    bases: list = field(default_factory=lambda: ["z", "x"])
    hwp_settings_deg: list = field(
        default_factory=lambda: [11.25 * k for k in range(12)]
    )
    delay_settings_us: list = field(
        default_factory=lambda: [0.7 * k for k in range(12)]
    )
    herald_detector: str = "snspd"
    readout_detector: str = "apd"
    z_analyzer_qwp_deg: float = 45.0
    x_analyzer_hwp_deg: float = 22.5
    visibility_sigma_sys: float = 0.0  # systematic allowance added to sigma_V

    def validate(self) -> None:
        if self.trials < 0 or self.duration_s < 0.0:
            raise ValueError("trials and duration_s must be non-negative")
        if not 0.0 <= self.overhead_fraction < 1.0:
            raise ValueError(f"overhead_fraction {self.overhead_fraction} outside [0, 1)")
        if not self.bases:
            raise ValueError("bases must list at least one of 'z', 'x'")
        for b in self.bases:
            if b not in ("z", "x"):
                raise ValueError(f"unknown basis {b!r}")
        for name in ("hwp_settings_deg", "delay_settings_us"):
            vals = getattr(self, name)
            if len(vals) != len(set(float(v) for v in vals)):
                raise ValueError(f"{name} contains duplicate settings")
            if not vals:
                raise ValueError(f"{name} must not be empty")
        for name in ("herald_detector", "readout_detector"):
            if getattr(self, name) not in ("snspd", "apd"):
                raise ValueError(f"{name} must be 'snspd' or 'apd'")
        if self.visibility_sigma_sys < 0.0:
            raise ValueError("visibility_sigma_sys must be non-negative")


@dataclass
class TrialRecord:
    trial_id: int
    write_time_us: float
    herald: str                 # 'none', 't', or 'r'
    herald_time_us: float
    basis: str
    setting: float
    delay_us: float
    outcome: str                # 'up', 'down', or 'none'
    flags: str                  # comma-joined noise flags


@dataclass
class Schedule:
    cycle_time_us: float
    cycles_per_round: int
    rounds: int
    cycles_per_load: int
    load_wall_ms: float
    readout_delay_us: float
    duty_factor: float          # compensation dead-time reduction

    @property
    def round_duration_us(self) -> float:
        return self.cycles_per_round * self.cycle_time_us


def build_schedule(cfg: "LinkConfig") -> Schedule:
    """Derive cycle time and cycles per round from the configured timings.

    The cycle is pump, write, then a wait until the herald decision (the
    single-trip readout delay, or the write+window gate if that is longer),
    plus the budgeted contingent read pulse.  The per-round cycle count is
    the configured cap or the number fitting the experiment-phase budget,
    whichever is smaller.
    """
    seq = cfg.sequence
    seq.validate()
    delay_us = propagation_delay(cfg.fiber.length_km, cfg.fiber)
    gate_us = (seq.write_ns + seq.window_ns) / 1000.0
    cycle_us = seq.pump_us + max(delay_us, gate_us) + seq.read_ns / 1000.0
    budget_us = seq.experiment_phase_ms * 1000.0 - (seq.rounds - 1) * seq.inter_round_us
    per_round = budget_us / seq.rounds / cycle_us
    if per_round < 0.5:
        raise ScheduleError(
            f"cycle of {cycle_us:.2f} us does not fit the "
            f"{seq.experiment_phase_ms} ms experiment phase"
        )
    cycles_per_round = min(seq.cycles_per_round_cap, max(1, round(per_round)))
    duty = cfg.compensation.duty_factor() if cfg.qfc.enabled else 1.0
    return Schedule(
        cycle_time_us=cycle_us,
        cycles_per_round=cycles_per_round,
        rounds=seq.rounds,
        cycles_per_load=seq.rounds * cycles_per_round,
        load_wall_ms=seq.cooling_ms + seq.experiment_phase_ms,
        readout_delay_us=delay_us,
        duty_factor=duty,
    )


def repetition_rate_khz(cfg: "LinkConfig") -> float:
    """Trials per wall-clock millisecond (= kHz), after compensation dead time."""
    sched = build_schedule(cfg)
    return sched.cycles_per_load / sched.load_wall_ms * sched.duty_factor


@dataclass
class HeraldChain:
    """Everything between the node output and the herald detectors."""

    photon_operator: np.ndarray   # polarization-dependent part, circular basis
    scalar: float                 # polarization-independent transmission
    detector_efficiency: float
    noise_window_prob: float      # per port, inside the acceptance window
    noise_rate_per_ns: float      # per port, over the full record
    qfc_noise_share: float        # converter fraction of the noise rate


def build_herald_chain(cfg: "LinkConfig") -> HeraldChain:
    det = cfg.detectors[cfg.run.herald_detector]
    fiber_t = transmittance(cfg.fiber.length_km, cfg.fiber.atten_db_per_km)
    window_s = cfg.sequence.window_ns * 1e-9
    if cfg.qfc.enabled:
        op = qfc_jones_operator(cfg.qfc, phase_difference=cfg.qfc_phase_difference)
        scalar = cfg.filter.bpf_coupling_eff * fiber_t
        qfc_noise = cfg.qfc.noise_rate_cps * fiber_t
    else:
        op = np.eye(2, dtype=complex)
        scalar = fiber_t
        qfc_noise = 0.0
    noise_cps = qfc_noise + det.dark_cps
    return HeraldChain(
        photon_operator=op,
        scalar=scalar,
        detector_efficiency=det.efficiency,
        noise_window_prob=noise_cps * window_s,
        noise_rate_per_ns=noise_cps * 1e-9,
        qfc_noise_share=qfc_noise / noise_cps if noise_cps > 0.0 else 0.0,
    )


def herald_probability(cfg: "LinkConfig") -> float:
    """Closed-form herald probability per trial; cross-checks the sampler.

    Signal term: p_exc times the polarization-averaged chain transmission
    times the detector efficiency; noise term: the complement product of the
    two per-port window noise probabilities.
    """
    chain = build_herald_chain(cfg)
    rho = node_mod.initial_state(cfg.node)
    p_signal = (
        cfg.node.p_exc
        * rho.photon_event_probability(chain.photon_operator)
        * chain.scalar
        * chain.detector_efficiency
    )
    return 1.0 - (1.0 - p_signal) * (1.0 - chain.noise_window_prob) ** 2


@dataclass
class _SettingBlock:
    basis: str
    setting: float
    position: int               # index within the basis' setting list
    extra_delay_us: float
    p_port_rel: np.ndarray      # relative port probabilities given emission
    bloch: np.ndarray           # conditioned atom Bloch vectors, shape (2, 3)
    n_trials: int


def analyzers_for(cfg: "LinkConfig", basis: str, setting: float) -> tuple:
    """(transmit, reflect) analyzer pair for one fringe setting.

    The pole-basis fringe rotates the half-wave plate behind a fixed
    quarter-wave plate, sweeping the projector through the circular poles;
    the superposition-basis fringe fixes the analyzer on the diagonal states
    and scans the readout delay instead.
    """
    if basis == "z":
        return tuple(
            AnalyzerSetting(hwp_deg=setting, qwp_deg=cfg.run.z_analyzer_qwp_deg, port=p)
            for p in ("transmit", "reflect")
        )
    return tuple(
        AnalyzerSetting(hwp_deg=cfg.run.x_analyzer_hwp_deg, qwp_deg=None, port=p)
        for p in ("transmit", "reflect")
    )


def _setting_blocks(cfg: "LinkConfig", total_trials: int) -> list:
    """Split the trial budget evenly over bases and settings."""
    rho0 = node_mod.initial_state(cfg.node)
    chain = build_herald_chain(cfg)
    blocks = []
    per_basis = total_trials // len(cfg.run.bases)
    for basis in cfg.run.bases:
        settings = cfg.run.hwp_settings_deg if basis == "z" else cfg.run.delay_settings_us
        per_setting = per_basis // len(settings)
        for pos, s in enumerate(settings):
            analyzers = analyzers_for(cfg, basis, float(s))
            p_rel = np.empty(2)
            bloch = np.empty((2, 3))
            for i, an in enumerate(analyzers):
                port_ket = an.unitary().conj().T @ an.port_state().as_array()
                k_op = np.outer(port_ket, port_ket.conj()) @ chain.photon_operator
                rho_a, p = rho0.conditional_atom_state(k_op)
                p_rel[i] = p
                bloch[i] = node_mod.atom_bloch(rho_a)
            blocks.append(
                _SettingBlock(
                    basis=basis,
                    setting=float(s),
                    position=pos,
                    extra_delay_us=float(s) if basis == "x" else 0.0,
                    p_port_rel=p_rel,
                    bloch=bloch,
                    n_trials=per_setting,
                )
            )
    return blocks


@dataclass
class FringeCounts:
    basis: str
    settings: np.ndarray
    singles: np.ndarray          # heralds per setting
    coincidences: np.ndarray     # in-phase (port, outcome) pair counts

    def add(self, other: "FringeCounts") -> "FringeCounts":
        if self.basis != other.basis or not np.array_equal(self.settings, other.settings):
            raise ValueError("fringe counts have incompatible settings")
        return FringeCounts(
            self.basis,
            self.settings,
            self.singles + other.singles,
            self.coincidences + other.coincidences,
        )


@dataclass
class SessionResult:
    seed: int
    n_trials: int
    n_heralds: int
    n_noise_heralds: int
    n_readout_signal: int
    n_readout_noise: int
    schedule: Schedule
    fringes: dict                 # basis -> FringeCounts
    writeout_hist: Histogram
    readout_hist: Histogram
    trials: list                  # heralded TrialRecord entries
    events: list                  # DetectionEvent entries

    @property
    def herald_rate(self) -> float:
        return self.n_heralds / self.n_trials if self.n_trials else 0.0

    def merge(self, other: "SessionResult") -> "SessionResult":
        fringes = {
            b: self.fringes[b].add(other.fringes[b])
            for b in self.fringes
            if b in other.fringes
        }
        return SessionResult(
            seed=self.seed,
            n_trials=self.n_trials + other.n_trials,
            n_heralds=self.n_heralds + other.n_heralds,
            n_noise_heralds=self.n_noise_heralds + other.n_noise_heralds,
            n_readout_signal=self.n_readout_signal + other.n_readout_signal,
            n_readout_noise=self.n_readout_noise + other.n_readout_noise,
            schedule=self.schedule,
            fringes=fringes,
            writeout_hist=self.writeout_hist.add(other.writeout_hist),
            readout_hist=self.readout_hist.add(other.readout_hist),
            trials=self.trials + other.trials,
            events=self.events + other.events,
        )


def trial_write_times_us(trial_ids: np.ndarray, sched: Schedule, cfg: "LinkConfig") -> np.ndarray:
    """Absolute write-pulse times on the wall clock, including dead time."""
    seq = cfg.sequence
    load = trial_ids // sched.cycles_per_load
    j = trial_ids % sched.cycles_per_load
    rnd = j // sched.cycles_per_round
    cyc = j % sched.cycles_per_round
    live_us = (
        load * sched.load_wall_ms * 1000.0
        + seq.cooling_ms * 1000.0
        + rnd * (sched.round_duration_us + seq.inter_round_us)
        + cyc * sched.cycle_time_us
        + seq.pump_us
    )
    if cfg.compensation.enabled and cfg.qfc.enabled:
        period_us = cfg.compensation.period_s * 1e6
        dead_us = cfg.compensation.dead_s * 1e6
        live_us = live_us + np.floor(live_us / period_us) * dead_us
    return live_us


def session_trials_for_duration(cfg: "LinkConfig", duration_s: float) -> int:
    """Trial count for a wall-clock duration, including session overhead."""
    rate_per_s = repetition_rate_khz(cfg) * 1000.0
    return int(round(duration_s * rate_per_s * (1.0 - cfg.run.overhead_fraction)))


def run_session(
    cfg: "LinkConfig",
    n_trials: Optional[int] = None,
    duration_s: Optional[float] = None,
    rng_seed: Optional[int] = None,
    collect_trials: bool = True,
    collect_events: bool = True,
) -> SessionResult:
    """Simulate a data-taking session; deterministic for a given seed.

    The physics draws come from one generator; a second generator derived
    from the same seed only labels exported events, so toggling the
    collection flags cannot change any outcome.
    """
    cfg.validate()
    seed = cfg.seed if rng_seed is None else int(rng_seed)
    if duration_s is not None:
        total = session_trials_for_duration(cfg, duration_s)
    elif n_trials is not None:
        total = int(n_trials)
    else:
        total = cfg.run.trials

    sched = build_schedule(cfg)
    chain = build_herald_chain(cfg)
    blocks = _setting_blocks(cfg, total)
    ss_main, ss_label = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(ss_main)
    rng_label = np.random.default_rng(ss_label)

    seq = cfg.sequence
    wp = cfg.wavepacket
    write_shape = wp.writeout_shape()
    read_shape = wp.readout_shape()
    write_win = (
        write_shape.quantile(wp.window_quantile_lo),
        write_shape.quantile(wp.window_quantile_hi),
    )
    read_win = (
        read_shape.quantile(wp.window_quantile_lo),
        read_shape.quantile(wp.window_quantile_hi),
    )
    read_det = cfg.detectors[cfg.run.readout_detector]
    p_read_noise_win = read_det.efficiency / cfg.node.readout_snr_factor
    read_noise_per_ns = p_read_noise_win / (read_win[1] - read_win[0])

    # Histogram time axes are relative to the acceptance-window opening
    # (write-out record) and to the read trigger (read-out record).
    w_t0 = -wp.record_pre_ns
    w_bins = int(math.ceil(wp.record_pre_ns + seq.window_ns + wp.record_post_ns))
    r_t0 = -wp.record_pre_ns
    r_span = wp.record_pre_ns + seq.read_ns + wp.record_post_ns
    r_bins = int(math.ceil(r_span))
    w_counts = np.zeros(w_bins, dtype=np.int64)
    r_counts = np.zeros(r_bins, dtype=np.int64)
    p_read_noise_record = read_noise_per_ns * r_span
    p_out_noise = chain.noise_rate_per_ns * (wp.record_pre_ns + wp.record_post_ns)

    raman3 = node_mod.raman_bloch_matrix(cfg.node.raman_error_rad)
    omega = 2.0 * math.pi * node_mod.larmor_frequency_mhz(cfg.node)
    jitter_scale = cfg.node.phase_jitter_sigma_rad / cfg.node.jitter_ref_us

    fringes = {
        basis: FringeCounts(
            basis=basis,
            settings=np.array([b.setting for b in blocks if b.basis == basis]),
            singles=np.zeros(sum(1 for b in blocks if b.basis == basis), dtype=np.int64),
            coincidences=np.zeros(
                sum(1 for b in blocks if b.basis == basis), dtype=np.int64
            ),
        )
        for basis in cfg.run.bases
    }
    trials_out = []
    events_out = []
    n_heralds = n_noise_heralds = n_read_sig = n_read_noise = 0
    trial_base = 0

    for block in blocks:
        p_t = block.p_port_rel[0] * chain.scalar * chain.detector_efficiency
        p_r = block.p_port_rel[1] * chain.scalar * chain.detector_efficiency
        for start in range(0, block.n_trials, CHUNK_TRIALS):
            n = min(CHUNK_TRIALS, block.n_trials - start)
            ids = trial_base + start + np.arange(n, dtype=np.int64)

            excited = rng.random(n) < cfg.node.p_exc
            u_port = rng.random(n)
            sig_t = excited & (u_port < p_t)
            sig_r = excited & ~sig_t & (u_port < p_t + p_r)
            t_sig = write_shape.sample(rng, n)
            np.clip(t_sig, 0.0, seq.window_ns - 1e-6, out=t_sig)

            noise_t = rng.random(n) < chain.noise_window_prob
            noise_r = rng.random(n) < chain.noise_window_prob
            t_noise_t = rng.uniform(0.0, seq.window_ns, n)
            t_noise_r = rng.uniform(0.0, seq.window_ns, n)

            # Earliest in-window click across ports heralds the trial.
            cand_t = np.where(sig_t, t_sig, np.inf)
            cand_t = np.minimum(cand_t, np.where(noise_t, t_noise_t, np.inf))
            cand_r = np.where(sig_r, t_sig, np.inf)
            cand_r = np.minimum(cand_r, np.where(noise_r, t_noise_r, np.inf))
            herald_port = np.where(cand_t <= cand_r, 0, 1)  # 0 transmit, 1 reflect
            herald_time_in = np.where(herald_port == 0, cand_t, cand_r)
            heralded = np.isfinite(herald_time_in)
            herald_is_signal = (
                np.where(
                    herald_port == 0,
                    sig_t & (cand_t == t_sig),
                    sig_r & (cand_r == t_sig),
                )
                & heralded
            )

            idx = np.nonzero(heralded)[0]
            n_h = idx.size
            n_heralds += n_h
            n_noise_heralds += int((~herald_is_signal[idx]).sum())
            fr = fringes[block.basis]
            fr.singles[block.position] += n_h

            # --- readout of heralded trials ---
            delay_us = (
                sched.readout_delay_us + herald_time_in[idx] * 1e-3 + block.extra_delay_us
            )
            lam = node_mod.coherence_factor(delay_us, cfg.node)
            phi = omega * delay_us
            if jitter_scale > 0.0:
                phi = phi + rng.normal(0.0, 1.0, n_h) * (jitter_scale * delay_us)
            port_h = herald_port[idx]
            is_sig_h = herald_is_signal[idx]
            # Signal heralds condition the memory on the analyzed photon;
            # an excitation whose photon went undetected leaves the marginal
            # (maximally mixed) state; no excitation leaves no spin wave.
            has_spin_wave = excited[idx]
            bx0 = np.where(is_sig_h, block.bloch[port_h, 0], 0.0)
            by0 = np.where(is_sig_h, block.bloch[port_h, 1], 0.0)
            bz0 = np.where(is_sig_h, block.bloch[port_h, 2], 0.0)
            p_down_state = stored_down_probability(
                bx0, by0, bz0, phi, lam, block.basis, raman3
            )

            eta = node_mod.retrieval_efficiency(delay_us, cfg.node)
            if cfg.node.od_decay_fraction > 0.0:
                phase_pos = (ids[idx] % sched.cycles_per_load) / sched.cycles_per_load
                eta = eta * (1.0 - cfg.node.od_decay_fraction * phase_pos)
            q_down = np.where(
                has_spin_wave,
                eta * cfg.node.eta_down * p_down_state * read_det.efficiency,
                0.0,
            )
            q_up = np.where(
                has_spin_wave,
                eta * cfg.node.eta_up * (1.0 - p_down_state) * read_det.efficiency,
                0.0,
            )
            u_read = rng.random(n_h)
            read_down_sig = u_read < q_down
            read_up_sig = ~read_down_sig & (u_read < q_down + q_up)
            read_sig = read_down_sig | read_up_sig
            t_read_sig = read_shape.sample(rng, n_h)
            np.clip(t_read_sig, 0.0, seq.read_ns - 1e-6, out=t_read_sig)

            read_noise = rng.random(n_h) < p_read_noise_record
            t_read_noise = rng.uniform(r_t0, r_t0 + r_span, n_h)
            noise_in_sig_win = (
                read_noise & (t_read_noise >= read_win[0]) & (t_read_noise < read_win[1])
            )
            read_noise_down = rng.random(n_h) < 0.5

            sig_first = read_sig & (~noise_in_sig_win | (t_read_sig <= t_read_noise))
            noise_first = noise_in_sig_win & ~sig_first
            outcome_down = (sig_first & read_down_sig) | (noise_first & read_noise_down)
            outcome_up = (sig_first & read_up_sig) | (noise_first & ~read_noise_down)
            n_read_sig += int(read_sig.sum())
            n_read_noise += int(noise_in_sig_win.sum())

            pair_plus = ((port_h == 0) & outcome_down) | ((port_h == 1) & outcome_up)
            fr.coincidences[block.position] += int(pair_plus.sum())

            # --- histograms ---
            w_idx = np.floor(herald_time_in[idx] - w_t0).astype(int)
            w_counts += np.bincount(w_idx, minlength=w_bins)[:w_bins]
            out_noise_t = rng.random(n) < p_out_noise
            out_noise_r = rng.random(n) < p_out_noise
            t_out_t = _sample_outside_window(
                rng, n, wp.record_pre_ns, seq.window_ns, wp.record_post_ns
            )
            t_out_r = _sample_outside_window(
                rng, n, wp.record_pre_ns, seq.window_ns, wp.record_post_ns
            )
            for mask, tt in ((out_noise_t, t_out_t), (out_noise_r, t_out_r)):
                oi = np.floor(tt[mask] - w_t0).astype(int)
                w_counts += np.bincount(oi, minlength=w_bins)[:w_bins]
            if n_h:
                r_times = np.concatenate(
                    [t_read_sig[read_sig], t_read_noise[read_noise]]
                )
                r_idx = np.floor(r_times - r_t0).astype(int)
                r_idx = r_idx[(r_idx >= 0) & (r_idx < r_bins)]
                r_counts += np.bincount(r_idx, minlength=r_bins)[:r_bins]

            # --- exports (labeling rng is independent of the physics rng) ---
            if (collect_trials or collect_events) and n_h:
                write_us = trial_write_times_us(ids[idx], sched, cfg)
                window_open_us = write_us + sched.readout_delay_us
                herald_us = window_open_us + herald_time_in[idx] * 1e-3
                read_trigger_us = write_us + delay_us
                if collect_trials:
                    for k in range(n_h):
                        flags = []
                        if not is_sig_h[k]:
                            flags.append("herald_noise")
                        if noise_in_sig_win[k]:
                            flags.append("read_noise")
                        outcome = "down" if outcome_down[k] else ("up" if outcome_up[k] else "none")
                        trials_out.append(
                            TrialRecord(
                                trial_id=int(ids[idx][k]),
                                write_time_us=float(write_us[k]),
                                herald="t" if port_h[k] == 0 else "r",
                                herald_time_us=float(herald_us[k]),
                                basis=block.basis,
                                setting=block.setting,
                                delay_us=float(delay_us[k]),
                                outcome=outcome,
                                flags=",".join(flags),
                            )
                        )
                if collect_events:
                    for k in range(n_h):
                        kind = "signal" if is_sig_h[k] else (
                            "noise" if rng_label.random() < chain.qfc_noise_share else "dark"
                        )
                        events_out.append(
                            DetectionEvent(
                                trial_id=int(ids[idx][k]),
                                channel="herald_t" if port_h[k] == 0 else "herald_r",
                                timestamp_ns=int(round(herald_us[k] * 1000.0)),
                                kind=kind,
                            )
                        )
                        if read_sig[k]:
                            events_out.append(
                                DetectionEvent(
                                    trial_id=int(ids[idx][k]),
                                    channel="read_down" if read_down_sig[k] else "read_up",
                                    timestamp_ns=int(
                                        round((read_trigger_us[k] + t_read_sig[k] * 1e-3) * 1000.0)
                                    ),
                                    kind="signal",
                                )
                            )
                        if read_noise[k]:
                            events_out.append(
                                DetectionEvent(
                                    trial_id=int(ids[idx][k]),
                                    channel="read_down" if read_noise_down[k] else "read_up",
                                    timestamp_ns=int(
                                        round(
                                            (read_trigger_us[k] + t_read_noise[k] * 1e-3) * 1000.0
                                        )
                                    ),
                                    kind="noise",
                                )
                            )
            if collect_events:
                out_any = np.nonzero(out_noise_t | out_noise_r)[0]
                if out_any.size:
                    open_us = trial_write_times_us(ids[out_any], sched, cfg) + sched.readout_delay_us
                    for pos_i, j in enumerate(out_any):
                        for mask, tt, ch in (
                            (out_noise_t, t_out_t, "herald_t"),
                            (out_noise_r, t_out_r, "herald_r"),
                        ):
                            if mask[j]:
                                kind = (
                                    "noise"
                                    if rng_label.random() < chain.qfc_noise_share
                                    else "dark"
                                )
                                events_out.append(
                                    DetectionEvent(
                                        trial_id=int(ids[j]),
                                        channel=ch,
                                        timestamp_ns=int(
                                            round((open_us[pos_i] + tt[j] * 1e-3) * 1000.0)
                                        ),
                                        kind=kind,
                                    )
                                )
        trial_base += block.n_trials

    writeout_hist = Histogram(
        t0_ns=w_t0, bin_width_ns=1.0, counts=w_counts, signal_window_ns=write_win
    )
    readout_hist = Histogram(
        t0_ns=r_t0, bin_width_ns=1.0, counts=r_counts, signal_window_ns=read_win
    )
    return SessionResult(
        seed=seed,
        n_trials=trial_base,
        n_heralds=n_heralds,
        n_noise_heralds=n_noise_heralds,
        n_readout_signal=n_read_sig,
        n_readout_noise=n_read_noise,
        schedule=sched,
        fringes=fringes,
        writeout_hist=writeout_hist,
        readout_hist=readout_hist,
        trials=trials_out,
        events=events_out,
    )


def stored_down_probability(bx0, by0, bz0, phi, lam, basis, raman3):
    """Born probability of the 'down' outcome after storage and transfer.

    Rotates the stored Bloch vector by the accumulated phase, damps its
    equatorial components, and (in the superposition basis) applies the
    transfer-pulse rotation; the readout then projects on the poles.
    """
    cphi, sphi = np.cos(phi), np.sin(phi)
    bx = lam * (bx0 * cphi - by0 * sphi)
    by = lam * (bx0 * sphi + by0 * cphi)
    if basis == "x":
        z_f = raman3[2, 0] * bx + raman3[2, 1] * by + raman3[2, 2] * bz0
    else:
        z_f = np.asarray(bz0) + 0.0 * np.asarray(phi)
    return 0.5 * (1.0 + z_f)


def _sample_outside_window(rng, n, pre_ns, window_ns, post_ns):
    """Uniform times over the record excluding the acceptance window."""
    u = rng.uniform(0.0, pre_ns + post_ns, n)
    return np.where(u < pre_ns, u - pre_ns, window_ns + (u - pre_ns))


def run_sharded(cfg: "LinkConfig", n_shards: int, n_trials: Optional[int] = None) -> SessionResult:
    """Run independent shards with derived seeds and merge their statistics."""
    total = int(n_trials if n_trials is not None else cfg.run.trials)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_shards)
    per_shard = total // n_shards
    results = [
        run_session(
            cfg,
            n_trials=per_shard,
            rng_seed=int(ss.generate_state(1)[0]),
            collect_trials=False,
            collect_events=False,
        )
        for ss in seeds
    ]
    merged = results[0]
    for r in results[1:]:
        merged = merged.merge(r)
    return merged
