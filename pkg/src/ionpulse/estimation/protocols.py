"""Fits of the simulated protocols to measured or synthetic data.

Every protocol fit carries an additive detuning offset (where detuning enters)
and reports the rotation angle folded into [0, pi], since theta and
2 pi - theta produce the same populations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..experiments import burst_map, dark_state_curves, pi_scan_model, ramsey_initial_state
from ..quantum_core import AtomModel, propagate_train
from .engine import Dataset, FitProblem, FitResult, Parameter, multistart

N_STARTS = 8


def binomial_variance(p_obs, shots):
    """Variance of an observed fraction, with p(1-p) floored at 1/(4 shots)."""
    p_obs = np.asarray(p_obs, float)
    shots = np.asarray(shots, float)
    return np.maximum(p_obs * (1.0 - p_obs), 1.0 / (4.0 * shots)) / shots


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    return -((-np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi)


def _theta_starts(n=N_STARTS):
    return (np.arange(n) + 0.5) * math.pi / n


def _peak_offset(detunings, p_d):
    """Detuning offset that moves the weighted centroid of the peak to zero."""
    w = np.clip(np.asarray(p_d, float) - np.min(p_d), 0.0, None)
    if w.sum() == 0:
        return 0.0
    return -float(np.sum(w * detunings) / w.sum())


# --------------------------------------------------------------------------
# many-pulse dark-state pumping
# --------------------------------------------------------------------------

@dataclass
class ScanSubset:
    """P_D versus detuning (rad/ns) for one pulse count."""

    detuning: np.ndarray
    n: int
    p_d: np.ndarray
    shots: int | np.ndarray = 100

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, float)
        self.p_d = np.asarray(self.p_d, float)
        if self.detuning.shape != self.p_d.shape:
            raise ValueError("detuning and p_d lengths differ")
        if np.any(np.asarray(self.shots) < 1):
            raise ValueError("shots must be >= 1")


def fit_many_pulse_scan(data: Sequence[ScanSubset], rep_rate: float,
                        atom: AtomModel | None = None, **kwargs) -> FitResult:
    """Joint fit of a shared theta and detuning offset to all pulse counts."""
    atom = atom or AtomModel()
    tau = 1.0 / rep_rate
    half = math.pi * rep_rate
    datasets = [Dataset((s.detuning, s.n), s.p_d, 1.0 / binomial_variance(s.p_d, s.shots))
                for s in data]
    counts = sorted({s.n for s in data})
    grid = np.unique(np.concatenate([s.detuning for s in data]))

    def model(x):
        theta, offset = x
        # one propagation per distinct detuning, shared by all subsets
        curves = dark_state_curves(theta, tau, atom, grid + offset, counts)
        out = []
        for s in data:
            rows = np.searchsorted(grid, s.detuning)
            out.append(curves[rows, counts.index(s.n)])
        return out

    all_det = np.concatenate([s.detuning for s in data])
    all_p = np.concatenate([s.p_d for s in data])
    offset0 = float(np.clip(_peak_offset(all_det, all_p), -half, half))
    problem = FitProblem(model, [Parameter("theta", 1.0, 0.0, math.pi),
                                 Parameter("detuning_offset", offset0, -half, half)],
                         datasets)
    starts = [(t, offset0) for t in _theta_starts()]
    return multistart(problem, starts, **kwargs)


# --------------------------------------------------------------------------
# single-pulse bursts
# --------------------------------------------------------------------------

@dataclass
class BurstMapData:
    """Accumulated P_D on a detuning x pulse-count grid, shape (D, K)."""

    detuning: np.ndarray
    pulse_counts: np.ndarray
    p_d: np.ndarray
    shots: int | np.ndarray = 100
    m: int = 20

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, float)
        self.pulse_counts = np.asarray(self.pulse_counts, int)
        self.p_d = np.asarray(self.p_d, float)
        if self.p_d.shape != (self.detuning.size, self.pulse_counts.size):
            raise ValueError("p_d must have shape (len(detuning), len(pulse_counts))")
        if self.detuning.size < 2 or self.pulse_counts.size < 2:
            raise ValueError("the grid must have at least two points on each axis")
        if np.any(self.pulse_counts < 1):
            raise ValueError("pulse counts must be >= 1")


def _burst_predictions(data: BurstMapData, tau, atom, theta, dphi, offset, theta_first):
    cols = data.pulse_counts - 1
    full = burst_map(theta, tau, atom, data.detuning + np.asarray(offset)[..., None],
                     int(data.pulse_counts.max()), data.m,
                     theta_first=theta_first, dphi_first=dphi)
    return full[..., cols]


def fit_single_pulse_map(data: BurstMapData, rep_rate: float, fit_first_area: bool = False,
                         atom: AtomModel | None = None, **kwargs) -> FitResult:
    """Fit theta, the first-pulse phase offset and a detuning offset.

    With ``fit_first_area`` the first pulse also gets its own rotation angle.
    Starts are the best grid points of a coarse scan over theta, the phase
    offset and (optionally) the first-pulse angle.
    """
    atom = atom or AtomModel()
    tau = 1.0 / rep_rate
    half = math.pi * rep_rate
    weights = 1.0 / binomial_variance(data.p_d, data.shots)
    datasets = [Dataset(data.detuning, data.p_d, weights)]

    def model(x):
        theta, dphi, offset = x[:3]
        theta_first = x[3] if fit_first_area else theta
        return [_burst_predictions(data, tau, atom, theta, dphi, offset, theta_first)]

    params = [Parameter("theta", 1.0, 0.0, math.pi),
              Parameter("dphi_first", math.pi, -math.pi, 3.0 * math.pi),
              Parameter("detuning_offset", 0.0, -half, half)]
    if fit_first_area:
        params.append(Parameter("theta_first", 1.0, 0.0, math.pi))
    problem = FitProblem(model, params, datasets)

    # coarse scan for starting points
    t_grid = _theta_starts()
    p_grid = np.arange(N_STARTS) * 2.0 * math.pi / N_STARTS
    if fit_first_area:
        tt, pp, ff = np.meshgrid(t_grid, p_grid, t_grid, indexing="ij")
    else:
        tt, pp = np.meshgrid(t_grid, p_grid, indexing="ij")
        ff = tt
    tt, pp, ff = tt.ravel(), pp.ravel(), ff.ravel()
    pred = _burst_predictions(data, tau, atom, tt[:, None], pp[:, None],
                              np.zeros(tt.size), ff[:, None])
    chi2 = np.sum(weights * (pred - data.p_d) ** 2, axis=(1, 2))
    best = np.argsort(chi2, kind="stable")[:N_STARTS]
    starts = []
    for i in best:
        start = [tt[i], pp[i], 0.0]
        if fit_first_area:
            start.append(ff[i])
        starts.append(start)

    result = multistart(problem, starts, **kwargs)
    i = result.names.index("dphi_first")
    result.values[i] = result.values[i] % (2.0 * math.pi)
    return result


# --------------------------------------------------------------------------
# pi-pulse power scan
# --------------------------------------------------------------------------

def fit_pi_scan(p_light, p_p, sigma=None, **kwargs) -> FitResult:
    """Fit P_P = p_max sin^2(sqrt(P_light) / omega) to a power scan.

    Without ``sigma`` the fit is unweighted. Weights built from the observed
    P_P scatter are not recommended: they bias p_max low.
    """
    p_light = np.asarray(p_light, float)
    p_p = np.asarray(p_p, float)
    if p_light.size < 5:
        raise ValueError("a power scan needs at least 5 points")
    weights = None if sigma is None else 1.0 / np.asarray(sigma, float) ** 2
    datasets = [Dataset(p_light, p_p, weights)]

    def model(x):
        return [pi_scan_model(p_light, x[0], x[1])]

    root_max = float(np.sqrt(p_light.max()))
    problem = FitProblem(model, [Parameter("p_max", 1.0, 0.0, 1.2),
                                 Parameter("omega", root_max, 1e-9 * root_max, math.inf)],
                         datasets)
    # first maximum placed between 1/4 and 2 times the largest sqrt(power)
    positions = np.geomspace(0.25, 2.0, N_STARTS) * root_max
    starts = [(min(max(float(np.max(p_p)), 0.05), 1.2), 2.0 * pos / math.pi)
              for pos in positions]
    return multistart(problem, starts, tie_break=None, **kwargs)


# --------------------------------------------------------------------------
# Ramsey contrast and phase
# --------------------------------------------------------------------------

@dataclass
class RamseyData:
    """Readout counts of |3> per pulse count (rows) and analysis phase (columns)."""

    ns: np.ndarray
    phases: np.ndarray
    counts: np.ndarray
    shots: int = 100

    def __post_init__(self):
        self.ns = np.asarray(self.ns, int)
        self.phases = np.asarray(self.phases, float)
        self.counts = np.asarray(self.counts, float)
        if self.counts.shape != (self.ns.size, self.phases.size):
            raise ValueError("counts must have shape (len(ns), len(phases))")
        if np.unique(self.ns).size < 3:
            raise ValueError("at least 3 distinct pulse counts are required")


@dataclass
class FringeFit:
    ns: np.ndarray
    contrast: np.ndarray
    contrast_err: np.ndarray
    phase: np.ndarray
    phase_err: np.ndarray
    degenerate: np.ndarray = field(default=None)


def fit_fringes(data: RamseyData, noise_floor: float = 3.0) -> FringeFit:
    """Weighted sinusoid fit a + b cos(phi) + c sin(phi) for every pulse count.

    Contrast is 2 sqrt(b^2 + c^2) and phase atan2(c, b). Phases of fringes
    whose contrast is below ``noise_floor`` standard errors are flagged as
    degenerate.
    """
    design = np.column_stack([np.ones_like(data.phases), np.cos(data.phases),
                              np.sin(data.phases)])
    contrast, c_err, phase, p_err = (np.empty(data.ns.size) for _ in range(4))
    for i, counts in enumerate(data.counts):
        p_obs = counts / data.shots
        w = 1.0 / binomial_variance(p_obs, data.shots)
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(design * sw[:, None], p_obs * sw, rcond=None)
        cov = np.linalg.inv(design.T @ (design * w[:, None]))
        _, b, c = coef
        amp = math.hypot(b, c)
        contrast[i] = 2.0 * amp
        phase[i] = math.atan2(c, b)
        if amp > 0:
            gc = np.array([0.0, b, c]) / amp * 2.0
            gp = np.array([0.0, -c, b]) / amp ** 2
            c_err[i] = math.sqrt(gc @ cov @ gc)
            p_err[i] = math.sqrt(gp @ cov @ gp)
        else:
            c_err[i] = 2.0 * math.sqrt(max(cov[1, 1], cov[2, 2]))
            p_err[i] = math.pi
    degenerate = contrast < noise_floor * c_err
    return FringeFit(data.ns.copy(), contrast, c_err, phase, p_err, degenerate)


def ramsey_model(theta, delta, delta_prime, tau, atom, ns):
    """Model contrast and phase versus pulse count; batched over parameters."""
    rho = propagate_train(ramsey_initial_state(), theta, tau, atom, ns,
                          delta=delta, delta_prime=delta_prime)
    z = 2.0 * rho[..., 2, 0]
    return np.abs(z), np.angle(z)


def fit_ramsey(data: RamseyData | FringeFit, rep_rate: float,
               atom: AtomModel | None = None, noise_floor: float = 3.0,
               **kwargs) -> FitResult:
    """Two-stage Ramsey fit of theta, delta, delta' and a contrast scale.

    Stage one extracts contrast and phase per pulse count
    (:func:`fit_fringes`); stage two fits the simulated contrast (times the
    scale) and phase to that sequence. Phase points flagged degenerate are left
    out and listed in ``result.info["excluded_phase_n"]``.
    """
    atom = atom or AtomModel()
    tau = 1.0 / rep_rate
    half = math.pi * rep_rate
    fr = data if isinstance(data, FringeFit) else fit_fringes(data, noise_floor)
    ns = [int(n) for n in fr.ns]
    keep = ~fr.degenerate
    datasets = [Dataset(fr.ns, fr.contrast, 1.0 / fr.contrast_err ** 2),
                Dataset(fr.ns[keep], np.zeros(keep.sum()), 1.0 / fr.phase_err[keep] ** 2)]
    phase_obs = fr.phase[keep]

    def model(x):
        theta, delta, delta_prime, scale = x
        c, phi = ramsey_model(theta, delta, delta_prime, tau, atom, ns)
        return [scale * c, wrap_angle(phi[keep] - phase_obs)]

    params = [Parameter("theta", 1.0, 0.0, math.pi),
              Parameter("delta", 0.0, -half, half),
              Parameter("delta_prime", 0.0, -half, half),
              Parameter("contrast_scale", 1.0, 0.0, 2.0)]
    problem = FitProblem(model, params, datasets)

    # coarse scan; the scale is solved linearly at every grid point
    span = min(0.5, half)
    tt, dd, pp = np.meshgrid(np.linspace(0.05, 0.95, 16) * math.pi,
                             np.linspace(-span, span, 9), np.linspace(-span, span, 9),
                             indexing="ij")
    tt, dd, pp = tt.ravel(), dd.ravel(), pp.ravel()
    c_mod, phi_mod = ramsey_model(tt, dd, pp, tau, atom, ns)
    wc = datasets[0].weights
    scale = np.clip((c_mod * wc * fr.contrast).sum(1) / np.maximum((c_mod ** 2 * wc).sum(1), 1e-300),
                    0.0, 2.0)
    chi2 = (wc * (scale[:, None] * c_mod - fr.contrast) ** 2).sum(1)
    chi2 += (datasets[1].weights * wrap_angle(phi_mod[:, keep] - phase_obs) ** 2).sum(1)
    best = np.argsort(chi2, kind="stable")[:N_STARTS]
    starts = [(tt[i], dd[i], pp[i], max(scale[i], 1e-3)) for i in best]

    result = multistart(problem, starts, **kwargs)
    result.info["excluded_phase_n"] = [int(n) for n in fr.ns[~keep]]
    result.info["fringes"] = fr
    return result
