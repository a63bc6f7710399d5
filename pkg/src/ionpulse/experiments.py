"""Measurement protocols built on :mod:`ionpulse.quantum_core`.

Four sequences are covered: dark-state pumping with long trains, repeated
short bursts that accumulate 3D5/2 population, the single-pulse power scan
and the Ramsey contrast/phase experiment. All functions return noiseless
probabilities; :func:`synth_shots` turns them into binomial counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .quantum_core import (
    AtomModel, P52_BRANCHING, TrainParams, ket, projector, propagate_train, pure,
    simulate_train)

#: Repetition rates (GHz) used throughout the experiments.
REP_RATES_GHZ = (5.0, 2.5, 5.0 / 3.0, 1.25)


@dataclass(frozen=True)
class DarkStateScanSpec:
    rep_rate: float
    pulse_counts: tuple = (500, 1000, 2000, 5000)
    detuning_grid: tuple = ()
    shots: int = 100

    def __post_init__(self):
        if not self.pulse_counts or min(self.pulse_counts) < 1:
            raise ValueError("pulse_counts must be non-empty with every count >= 1")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")


@dataclass(frozen=True)
class BurstSpec:
    """``m`` repetitions of an ``n``-pulse train separated by ``t_wait`` ns."""

    n: int
    m: int = 20
    t_wait: float = 20_000.0

    def validate(self, atom: AtomModel) -> None:
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if atom.gamma_total > 0 and self.t_wait < 10.0 / atom.gamma_total:
            raise ValueError(
                f"t_wait = {self.t_wait} ns is shorter than 10 excited-state lifetimes")


@dataclass(frozen=True)
class RamseySpec:
    n_pulses: tuple
    analysis_phases: tuple = field(
        default_factory=lambda: tuple(np.linspace(0.0, 4.0 * math.pi, 41)))
    shots: int = 100

    def __post_init__(self):
        phases = np.asarray(self.analysis_phases)
        if phases.size < 3 or np.ptp(phases) < 2.0 * math.pi - 1e-12:
            raise ValueError("analysis_phases must span at least 2pi")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")


class Contrast(NamedTuple):
    C: float
    Phi: float
    degenerate: bool


def default_detuning_grid(rep_rate: float, points: int = 41) -> np.ndarray:
    """Detunings (rad/ns) spanning one comb-mode spacing around resonance."""
    half = math.pi * rep_rate
    return np.linspace(-half, half, points)


# --------------------------------------------------------------------------
# dark-state pumping
# --------------------------------------------------------------------------

def dark_state_probability(params: TrainParams, atom: AtomModel, n: int) -> float:
    """Population of |3> after ``n`` pulses from |1> and complete decay."""
    if n == 0:
        return 0.0
    rho = propagate_train(projector(1), params.theta, params.tau_pulse, atom, [n],
                          delta=params.delta, delta_prime=params.delta_prime,
                          theta_first=params.theta_first, dphi_first=params.dphi_first)
    return float(rho[0, 2, 2].real)


def dark_state_curves(theta, tau_pulse, atom, detunings, pulse_counts, *,
                      theta_first=None, dphi_first=0.0) -> np.ndarray:
    """P_D on a detuning x pulse-count grid, shape ``(len(detunings), len(pulse_counts))``.

    ``theta``, ``theta_first``, ``dphi_first`` and ``detunings`` broadcast
    together; give them extra leading axes to evaluate many parameter sets.
    """
    rho = propagate_train(projector(1), theta, tau_pulse, atom, pulse_counts,
                          delta=np.asarray(detunings, float),
                          theta_first=theta_first, dphi_first=dphi_first)
    return rho[..., 2, 2].real


def accumulate(p_single, m):
    """P_D after ``m`` bursts that each pump a fraction ``p_single`` of |1>."""
    return -np.expm1(m * np.log1p(-np.asarray(p_single, float)))


def burst_accumulation(params: TrainParams, atom: AtomModel, burst: BurstSpec) -> float:
    """P_D after ``burst.m`` trains of ``burst.n`` pulses.

    Every train starts with the anomalous first pulse and ends with complete
    decay of |2> during the waiting time; |3> population is never pumped back.
    Each train therefore starts from |1> with the population left there and
    pumps the same fraction of it, so one train gives the whole sequence.
    """
    burst.validate(atom)
    rho = propagate_train(projector(1), params.theta, params.tau_pulse, atom, [burst.n],
                          delta=params.delta, delta_prime=params.delta_prime,
                          theta_first=params.theta_first, dphi_first=params.dphi_first)
    return float(accumulate(rho[0, 2, 2].real, burst.m))


def burst_map(theta, tau_pulse, atom, detunings, max_pulses, m, *,
              theta_first=None, dphi_first=0.0) -> np.ndarray:
    """Accumulated P_D for n = 1..max_pulses, shape ``(len(detunings), max_pulses)``."""
    p_single = dark_state_curves(theta, tau_pulse, atom, detunings,
                                 range(1, max_pulses + 1),
                                 theta_first=theta_first, dphi_first=dphi_first)
    return accumulate(np.clip(p_single, 0.0, 1.0), m)


def invert_pp(p_d, m: int, p52: float = P52_BRANCHING):
    """Single-pulse |2> probability from P_D after ``m`` single-pulse bursts.

    Values above 1 are returned as they are; they flag measurement noise.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    p_d = np.asarray(p_d, float)
    out = -np.expm1(np.log1p(-p_d) / m) / p52
    return float(out) if out.ndim == 0 else out


def pi_scan_model(p_light, p_max, omega):
    """p_max sin^2(sqrt(P_light) / omega); omega in sqrt(power) units."""
    return p_max * np.sin(np.sqrt(p_light) / omega) ** 2


# --------------------------------------------------------------------------
# Ramsey
# --------------------------------------------------------------------------

def _sd_pauli():
    sx = np.zeros((3, 3), complex)
    sx[0, 2] = sx[2, 0] = 1.0
    sy = np.zeros((3, 3), complex)
    sy[0, 2] = -1j
    sy[2, 0] = 1j
    return sx, sy


def analysis_unitary(phi: float) -> np.ndarray:
    """Ideal pi/2 pulse on the 1-3 pair with analysis phase ``phi``.

    The axis is chosen so that the readout probability of |3> is
    (P1 + P3)/2 + C/2 cos(phi - Phi): the fringe peaks at the state's phase.
    """
    sx, sy = _sd_pauli()
    axis = phi + 0.5 * math.pi
    gen = math.cos(axis) * sx + math.sin(axis) * sy
    # generator squares to the 1-3 identity
    p13 = np.diag([1.0, 0.0, 1.0]).astype(complex)
    u = math.cos(math.pi / 4) * p13 - 1j * math.sin(math.pi / 4) * gen
    u[1, 1] = 1.0
    return u


def ramsey_initial_state() -> np.ndarray:
    return pure(ket(1) + ket(3))


def ramsey_states(params: TrainParams, atom: AtomModel, ns: Sequence[int]) -> np.ndarray:
    """Pre-analysis density matrices after ``n`` pulses and complete decay."""
    return propagate_train(ramsey_initial_state(), params.theta, params.tau_pulse, atom, ns,
                           delta=params.delta, delta_prime=params.delta_prime,
                           theta_first=params.theta_first, dphi_first=params.dphi_first)


def ramsey_point(params: TrainParams, atom: AtomModel, n: int, phi_analysis: float) -> float:
    """P3 after preparation, ``n`` pulses, complete decay and the analysis pulse."""
    rho = ramsey_states(params, atom, [n])[0]
    u = analysis_unitary(phi_analysis)
    return float((u @ rho @ u.conj().T)[2, 2].real)


def ramsey_fringe(rho, phases) -> np.ndarray:
    """Readout probability of |3> for each analysis phase, batched over ``rho``."""
    rho = np.asarray(rho)
    phases = np.asarray(phases, float)
    x = 2.0 * rho[..., 2, 0].real
    y = 2.0 * rho[..., 2, 0].imag
    base = 0.5 * (rho[..., 0, 0].real + rho[..., 2, 2].real)
    return (base[..., None] + 0.5 * (x[..., None] * np.cos(phases)
                                     + y[..., None] * np.sin(phases)))


def contrast_and_phase(rho, floor: float = 1e-12) -> Contrast:
    """Ramsey contrast sqrt(<sx>^2 + <sy>^2) and phase arg(<sx> + i <sy>).

    Below ``floor`` the phase is meaningless and reported as 0 with
    ``degenerate=True``.
    """
    sx, sy = _sd_pauli()
    rho = np.asarray(rho)
    x = float(np.trace(sx @ rho).real)
    y = float(np.trace(sy @ rho).real)
    c = math.hypot(x, y)
    if c < floor:
        return Contrast(c, 0.0, True)
    return Contrast(c, math.atan2(y, x), False)


def contrast_phase_arrays(rho):
    """Vectorised contrast and phase over a stack of density matrices."""
    z = 2.0 * np.asarray(rho)[..., 2, 0]
    return np.abs(z), np.angle(z)


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

def synth_shots(true_prob, shots: int, seed: int):
    """Binomial success counts for ``shots`` repetitions per probability."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    p = np.clip(np.asarray(true_prob, float), 0.0, 1.0)
    out = rng.binomial(shots, p)
    out = np.asarray(out)
    return int(out) if out.ndim == 0 else out
