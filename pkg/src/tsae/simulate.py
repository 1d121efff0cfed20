"""Synthetic two-timescale battery cell.

A first-order Thevenin equivalent circuit with aging factors supplies
ground truth for the separation task: state of charge and the aging pair
(theta_q, theta_r) move slowly, the RC branch voltage moves on a seconds
scale, and terminal voltage mixes both.

Discrete dynamics (current positive on discharge):

    SOC_{t+1}  = SOC_t - dt * I_t / (3600 * Q_nom * theta_q)
    Vrc_{t+1}  = Vrc_t * (1 - dt/tau) + dt * I_t / C1          tau = R1 * C1
    voltage_t  = OCV(SOC_t) - I_t * R0_nom * theta_r - Vrc_t + noise_t

Aging factors are constant within a cycle and follow a monotone fade
schedule across cycles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .data import CycleSeries, Dataset
from .errors import ConfigError, NumericalError, ShapeError

#: Rolling charge budget: any 50 s span of a generated profile moves SOC by
#: less than this fraction, keeping the slow states slow at every scale.
#: The budget itself is computed against nominal capacity so the delivered
#: current does not inherit the fade schedule; a faded cell then drains
#: somewhat faster per 50 s (by 1/theta_q), which the constant's headroom
#: below the 1% assumption absorbs down to theta_q = 0.5.
MAX_SOC_STEP_PER_50S = 0.009
BUDGET_SPAN_S = 50.0
#: Hard ceiling used when capacity fade is severe enough (theta_q < ~0.53)
#: that the nominal-capacity budget alone would let SOC move 1% in 50 s.
MAX_SOC_RATE_GUARD = 0.0095


@dataclass(frozen=True)
class SimConfig:
    """Physical and sampling parameters of the simulated cell."""

    q_nom_ah: float = 4.85
    r0_ohm: float = 0.030
    r1_ohm: float = 0.020
    c1_farad: float = 1000.0
    ocv_coeffs: tuple[float, float, float] = (3.2, 0.7, 0.3)
    dt_s: float = 0.1
    noise_std_v: float = 0.002
    seed: int = 0

    def __post_init__(self):
        for name in ("q_nom_ah", "r0_ohm", "r1_ohm", "c1_farad", "dt_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"SimConfig.{name} must be positive, got {getattr(self, name)}")
        if self.noise_std_v < 0:
            raise ConfigError(f"noise_std_v must be non-negative, got {self.noise_std_v}")
        if not 1.0 <= self.tau_s <= 60.0:
            raise ConfigError(
                f"RC time constant tau = R1*C1 = {self.tau_s:.3g} s outside [1, 60] s"
            )
        if self.dt_s >= self.tau_s:
            raise ConfigError(
                f"dt = {self.dt_s} s must stay below tau = {self.tau_s} s for a "
                f"stable RC update"
            )

    @property
    def tau_s(self) -> float:
        return self.r1_ohm * self.c1_farad


def ocv(soc, coeffs=(3.2, 0.7, 0.3)):
    """Open-circuit voltage curve: c0 + c1*s + c2*s^3 (monotone on [0, 1])."""
    s = np.asarray(soc, dtype=np.float64)
    c0, c1, c3 = coeffs
    out = c0 + c1 * s + c3 * s ** 3
    if out.ndim == 0:
        return float(out)
    return out


def simulate_cycle(cfg: SimConfig, theta_q: float, theta_r: float,
                   soc_start: float, current_profile, *,
                   cell_id: str = "S0", cycle_index: int = 0,
                   rng=None) -> CycleSeries:
    """Integrate the cell over one current profile.

    If SOC would leave [0, 1] the cycle is cut at the last valid sample and
    flagged ``truncated``.  Noise comes from ``rng`` (or a fresh generator
    seeded from the config).
    """
    if not 0.0 < soc_start <= 1.0:
        raise ConfigError(f"soc_start must be in (0, 1], got {soc_start}")
    if theta_q <= 0 or theta_r <= 0:
        raise ConfigError(f"aging factors must be positive, got {theta_q}, {theta_r}")
    current = np.asarray(current_profile, dtype=np.float64)
    if current.ndim != 1 or current.size == 0:
        raise ShapeError(f"current profile must be a non-empty vector, got {current.shape}")
    if not np.all(np.isfinite(current)):
        raise NumericalError("current profile contains non-finite values")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    dt = cfg.dt_s
    # SOC_t is the coulomb integral of everything before sample t.
    depletion = current * (dt / (3600.0 * cfg.q_nom_ah * theta_q))
    soc = soc_start - np.concatenate(([0.0], np.cumsum(depletion)[:-1]))
    out_of_range = (soc < 0.0) | (soc > 1.0)
    truncated = bool(out_of_range.any())
    n = int(np.argmax(out_of_range)) if truncated else soc.size
    if n == 0:
        raise NumericalError("SOC left [0, 1] immediately; check the profile sign")
    soc = soc[:n]
    current = current[:n]

    # Vrc_t depends on currents strictly before t: a shifted first-order IIR.
    alpha = 1.0 - dt / cfg.tau_s
    beta = dt / cfg.c1_farad
    filtered = lfilter([beta], [1.0, -alpha], current)
    v_rc = np.concatenate(([0.0], filtered[:-1]))

    noise = rng.normal(0.0, cfg.noise_std_v, size=n) if cfg.noise_std_v > 0 else 0.0
    voltage = ocv(soc, cfg.ocv_coeffs) - current * (cfg.r0_ohm * theta_r) - v_rc + noise
    return CycleSeries(
        cell_id=cell_id, cycle_index=cycle_index,
        time_s=np.arange(n) * dt, current_a=current, voltage_v=voltage,
        soc=soc, theta_q=float(theta_q), theta_r=float(theta_r),
        truncated=truncated,
    )


def _budget_cap(tail: np.ndarray, pulse_samples: int, dt: float,
                budget_amp_s: float) -> float:
    """Largest pulse amplitude that keeps every trailing-span charge in budget.

    ``tail`` holds the last span worth of already-emitted samples.  Checks
    every window that ends inside the new pulse.
    """
    span = tail.size
    tail_cumsum = np.concatenate(([0.0], np.cumsum(tail[::-1] * dt)))
    j = np.arange(1, min(pulse_samples, span) + 1)
    # each window: last (span - j) old samples plus j new samples
    limit = float(np.min((budget_amp_s - tail_cumsum[span - j]) / (j * dt)))
    if pulse_samples >= span:
        limit = min(limit, budget_amp_s / (span * dt))
    return limit


def pulsed_profile(rng, cfg: SimConfig, theta_q: float, charge_amp_s: float,
                   regen_prob: float = 0.12) -> np.ndarray:
    """Pseudo-random pulsed drive profile delivering a target charge.

    Piecewise-constant pulses of 1 to 30 s; discharge amplitudes up to 2C
    with long pulses biased toward low current, plus occasional short
    regenerative (negative) pulses.  A rolling budget caps the charge of
    every 50 s span so the slow states stay slow regardless of seed.
    """
    if charge_amp_s <= 0:
        raise ConfigError(f"charge target must be positive, got {charge_amp_s}")
    dt = cfg.dt_s
    i_max = 2.0 * cfg.q_nom_ah  # 2C in amperes
    span = max(1, int(round(BUDGET_SPAN_S / dt)))
    budget_amp_s = min(MAX_SOC_STEP_PER_50S * 3600.0 * cfg.q_nom_ah,
                       MAX_SOC_RATE_GUARD * 3600.0 * cfg.q_nom_ah * theta_q)
    pieces: list[np.ndarray] = []
    tail = np.zeros(span)  # an implicit rest precedes the cycle
    delivered = 0.0
    hard_cap = int(10 * charge_amp_s / (0.1 * i_max * dt)) + 20 * span
    total = 0
    while delivered < charge_amp_s:
        if rng.random() < regen_prob:
            amp = -rng.uniform(0.0, 0.35) * cfg.q_nom_ah
            duration = rng.uniform(1.0, 6.0)
        else:
            amp = i_max * rng.random() ** 2
            hi = 30.0 if amp <= 0.5 * i_max else 6.0
            duration = rng.uniform(1.0, hi)
        n = max(1, int(round(duration / dt)))
        if amp > 0:
            cap = _budget_cap(tail, n, dt, budget_amp_s)
            amp = min(amp, max(0.0, cap))
        pulse = np.full(n, amp)
        pieces.append(pulse)
        delivered += amp * n * dt
        tail = np.concatenate((tail, pulse))[-span:]
        total += n
        if total > hard_cap:
            raise NumericalError(
                "drive profile generation stalled before reaching the charge target"
            )
    return np.concatenate(pieces)


def fade_values(n_cycles: int, start: float, end: float) -> np.ndarray:
    """Linear fade schedule over cycle indices (single cycle stays at start)."""
    if n_cycles == 1:
        return np.array([start])
    return np.linspace(start, end, n_cycles)


def generate_dataset(cfg: SimConfig, n_cycles: int, *,
                     theta_q_schedule=None, theta_r_schedule=None,
                     soc_start: float = 0.8, soc_stop: float = 0.2,
                     seed=None, cell_id: str = "S0") -> Dataset:
    """Simulate an aging cell over ``n_cycles`` discharge cycles.

    Each cycle discharges from ``soc_start`` down to ``soc_stop`` under a
    fresh pulsed profile.  Schedules default to a linear fade of theta_q
    from 1.0 to 0.85 and theta_r from 1.0 to 1.3; custom schedules must be
    monotone with one value per cycle.  Deterministic per seed.
    """
    if n_cycles < 1:
        raise ConfigError(f"need at least one cycle, got {n_cycles}")
    if not 0.0 <= soc_stop < soc_start <= 1.0:
        raise ConfigError(
            f"need 0 <= soc_stop < soc_start <= 1, got {soc_stop}, {soc_start}"
        )
    if theta_q_schedule is None:
        theta_q_schedule = fade_values(n_cycles, 1.0, 0.85)
    if theta_r_schedule is None:
        theta_r_schedule = fade_values(n_cycles, 1.0, 1.3)
    theta_q_schedule = np.asarray(theta_q_schedule, dtype=np.float64)
    theta_r_schedule = np.asarray(theta_r_schedule, dtype=np.float64)
    for name, sched in (("theta_q", theta_q_schedule), ("theta_r", theta_r_schedule)):
        if sched.size == 0:
            raise ConfigError(f"empty {name} schedule")
        if sched.size != n_cycles:
            raise ConfigError(
                f"{name} schedule has {sched.size} entries for {n_cycles} cycles"
            )
        if np.any(sched <= 0):
            raise ConfigError(f"{name} schedule must stay positive")
    if np.any(np.diff(theta_q_schedule) > 0):
        raise ConfigError("theta_q schedule must be non-increasing (capacity fades)")
    if np.any(np.diff(theta_r_schedule) < 0):
        raise ConfigError("theta_r schedule must be non-decreasing (resistance grows)")

    if seed is None:
        seed = cfg.seed
    children = np.random.SeedSequence(seed).spawn(n_cycles)
    cycles = []
    for k in range(n_cycles):
        rng = np.random.default_rng(children[k])
        theta_q = float(theta_q_schedule[k])
        theta_r = float(theta_r_schedule[k])
        charge = (soc_start - soc_stop) * 3600.0 * cfg.q_nom_ah * theta_q
        profile = pulsed_profile(rng, cfg, theta_q, charge * 1.05)
        cycle = simulate_cycle(cfg, theta_q, theta_r, soc_start, profile,
                               cell_id=cell_id, cycle_index=k, rng=rng)
        # cut at the first sample at or below the stop level
        reached = np.nonzero(cycle.soc <= soc_stop)[0]
        if reached.size:
            n = int(reached[0]) + 1
            cycle = CycleSeries(
                cell_id=cycle.cell_id, cycle_index=cycle.cycle_index,
                time_s=cycle.time_s[:n], current_a=cycle.current_a[:n],
                voltage_v=cycle.voltage_v[:n], soc=cycle.soc[:n],
                theta_q=cycle.theta_q, theta_r=cycle.theta_r,
            )
        cycles.append(cycle)
    return Dataset(cycles=cycles, provenance="synthetic")


def discharge_capacity(current_a, dt: float, q_nom_ah: float) -> float:
    """Discharged fraction of nominal capacity, in percent.

    Q_dis = (sum of I * dt) / (Q_nom * 3600) * 100.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if q_nom_ah <= 0:
        raise ConfigError(f"Q_nom must be positive, got {q_nom_ah}")
    current = np.asarray(current_a, dtype=np.float64)
    return float(np.sum(current) * dt / (q_nom_ah * 3600.0) * 100.0)
