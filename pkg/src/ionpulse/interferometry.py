"""Pulse-to-pulse phase differences from delayed-arm interference.

A Michelson interferometer with one arm delayed by the pulse period overlaps
every pulse with its predecessor. The area of interference peak ``i`` is

    A_i = c sin(dphi_i + k dx) + offset,

where ``dx`` is a random arm-length offset that changes between measurements.
Plotting the areas of two peaks against each other traces an ellipse whose
opening encodes the phase difference between the two peaks, up to a sign.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateData, NotConverged, SingularJacobianWarning
from .estimation.engine import Dataset, FitProblem, Parameter, least_squares

MIN_SAMPLES = 8


@dataclass
class InterferogramSet:
    """Peak areas, shape ``(measurements, peaks)``."""

    areas: np.ndarray

    def __post_init__(self):
        self.areas = np.asarray(self.areas, float)
        if self.areas.ndim != 2 or self.areas.shape[1] < 2:
            raise ValueError("areas must be a 2-D array with at least two peaks")
        if self.areas.shape[0] < MIN_SAMPLES:
            raise ValueError(f"at least {MIN_SAMPLES} measurements are required")
        if not np.all(np.isfinite(self.areas)):
            raise ValueError("areas must be finite")

    @property
    def n_peaks(self) -> int:
        return self.areas.shape[1]


@dataclass
class EllipseFitResult:
    """Outcome of :func:`fit_ellipse`.

    ``dphi_abs`` lies in [0, pi]; the sign of the phase difference is not
    observable. ``amplitude`` holds the semi-extent along x and y and
    ``residual_rms`` is the rms distance of the points from the fitted curve
    in units of those extents.
    """

    dphi_abs: float
    center: tuple[float, float]
    amplitude: tuple[float, float]
    residual_rms: float
    degenerate: bool = False
    pair: tuple[int, int] | None = None


def synth_interferogram(pulse_phases: Sequence[float], delta_x_samples: Sequence[float],
                        wavelength: float, noise_sigma: float, seed: int, *,
                        amplitude: float = 1.0, offset: float = 1.0) -> InterferogramSet:
    """Synthetic peak areas for a train with the given per-pulse phase steps.

    ``pulse_phases[i]`` is the optical phase of pulse ``i`` relative to pulse
    ``i - 1`` (the entry for the first pulse is unused), so peak ``j`` carries
    ``pulse_phases[j + 1]``. ``delta_x_samples`` and ``wavelength`` share a
    length unit.

    Examples
    --------
    >>> s = synth_interferogram([0, 0.5, 0.5], np.linspace(0, 400, 9), 393.0, 0.0, 1)
    >>> bool(np.allclose(s.areas[:, 0], s.areas[:, 1]))
    True
    """
    phases = np.asarray(pulse_phases, float)
    if phases.size < 2:
        raise ValueError("at least two pulse phases are required")
    dx = np.asarray(delta_x_samples, float)
    if wavelength <= 0:
        raise ValueError("wavelength must be > 0")
    total = phases[None, 1:] + (2.0 * math.pi / wavelength) * dx[:, None]
    areas = amplitude * np.sin(total) + offset
    if noise_sigma > 0:
        areas = areas + np.random.default_rng(seed).normal(0.0, noise_sigma, areas.shape)
    return InterferogramSet(areas)


def _direct_conic(x, y):
    """Ellipse-specific algebraic conic fit, coefficients (A, B, C, D, E, F).

    Uses the numerically stable split of the scatter matrix; returns None
    when no ellipse solution exists.
    """
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1, s2, s3 = d1.T @ d1, d1.T @ d2, d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        return None
    m = s1 + s2 @ t
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    _, vecs = np.linalg.eig(m)
    vecs = vecs.real
    cond = 4.0 * vecs[0] * vecs[2] - vecs[1] ** 2
    ok = np.flatnonzero(cond > 0)
    if ok.size == 0:
        return None
    a1 = vecs[:, ok[np.argmax(cond[ok])]]
    return np.concatenate([a1, t @ a1])


def _conic_frame(x, y):
    """Center, semi-extents and cos(dphi) estimated from the conic fit."""
    coef = _direct_conic(x, y)
    if coef is not None:
        a, b, c, d, e, f = coef
        det = 4.0 * a * c - b * b
        xc, yc = np.linalg.solve([[2 * a, b], [b, 2 * c]], [-d, -e])
        k = -(a * xc * xc + b * xc * yc + c * yc * yc + d * xc + e * yc + f)
        if det > 0 and k / a > 0:
            ex = math.sqrt(4.0 * c * k / det)
            ey = math.sqrt(4.0 * a * k / det)
            cosd = -b / (2.0 * math.sqrt(a * c)) * np.sign(a)
            return xc, yc, ex, ey, float(np.clip(cosd, -1.0, 1.0))
    # uniform phase samples: extent = sqrt(2) std, correlation = cos(dphi)
    r = float(np.corrcoef(x, y)[0, 1])
    return (float(x.mean()), float(y.mean()), math.sqrt(2.0) * x.std(),
            math.sqrt(2.0) * y.std(), r)


def _curve_problem(u, v, dphi0):
    """Orthogonal-distance fit of (u0 + c sin t, v0 + c sin(t + dphi)).

    Parameters are (u0, v0, c, dphi, t_1 .. t_N); each sample gets its own
    unobserved phase t_i.
    """
    n = u.size
    sd, cd = math.sin(dphi0), math.cos(dphi0)
    t0 = np.arctan2(u, (v - u * cd) / sd) if sd > 1e-6 else np.arcsin(np.clip(u, -1, 1))
    obs = np.concatenate([u, v])
    idx = np.arange(n)

    def model(p):
        u0, v0, c, dphi = p[:4]
        t = p[4:]
        return [np.concatenate([u0 + c * np.sin(t), v0 + c * np.sin(t + dphi)])]

    def jacobian(p):
        c, dphi = p[2], p[3]
        t = p[4:]
        jac = np.zeros((2 * n, n + 4))
        jac[:n, 0] = 1.0
        jac[n:, 1] = 1.0
        jac[:n, 2] = np.sin(t)
        jac[n:, 2] = np.sin(t + dphi)
        jac[n:, 3] = c * np.cos(t + dphi)
        jac[idx, 4 + idx] = c * np.cos(t)
        jac[n + idx, 4 + idx] = c * np.cos(t + dphi)
        return [jac]

    params = [Parameter("u0", 0.0), Parameter("v0", 0.0),
              Parameter("c", 1.0, 1e-9, math.inf), Parameter("dphi", dphi0, 0.0, math.pi)]
    params += [Parameter(f"t{i}", float(ti)) for i, ti in enumerate(t0)]
    return FitProblem(model, params, [Dataset(None, obs)], jacobian)


def _line_limit(x, y, pair):
    r = float(np.corrcoef(x, y)[0, 1])
    sx, sy = x.std(), y.std()
    u, v = (x - x.mean()) / sx, (y - y.mean()) / sy
    # perpendicular distance from the +-45 degree line in standardised units
    rms = float(np.sqrt(np.mean((u - math.copysign(1.0, r) * v) ** 2) / 2.0) / math.sqrt(2.0))
    return EllipseFitResult(0.0 if r > 0 else math.pi, (float(x.mean()), float(y.mean())),
                            (float(math.sqrt(2.0) * sx), float(math.sqrt(2.0) * sy)), rms, True, pair)


def fit_ellipse(x_areas, y_areas, *, pair: tuple[int, int] | None = None) -> EllipseFitResult:
    """Phase difference between two interference peaks from their areas.

    Each axis is first rescaled to unit semi-extent using a direct conic fit,
    which makes the result independent of per-axis scale and offset. The
    equal-amplitude curve ``(c sin t, c sin(t + dphi))`` plus a center is then
    fitted in that frame by orthogonal-distance least squares, with one
    unobserved phase ``t`` per sample. The fit runs with the axes in both
    orders and the two results are averaged.

    When the minor axis of the fitted ellipse is not resolved above the
    scatter, the data are treated as a line: ``dphi_abs`` is 0 (positive
    slope) or pi (negative slope) and ``degenerate`` is set.

    Raises
    ------
    DegenerateData
        If either coordinate has no spread.
    """
    x = np.asarray(x_areas, float).ravel()
    y = np.asarray(y_areas, float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if x.size < MIN_SAMPLES:
        raise ValueError(f"at least {MIN_SAMPLES} paired samples are required")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("areas must be finite")
    if x.std() <= 1e-12 * max(np.abs(x).max(), 1e-300) or \
            y.std() <= 1e-12 * max(np.abs(y).max(), 1e-300):
        raise DegenerateData("no spread in one coordinate")

    r = float(np.corrcoef(x, y)[0, 1])
    if abs(r) >= 1.0 - 1e-12:
        return _line_limit(x, y, pair)

    # both orientations, averaged: the result is exactly swap-symmetric
    a = _oriented_fit(x, y)
    b = _oriented_fit(y, x)
    if a is None or b is None:
        return _line_limit(x, y, pair)
    return EllipseFitResult(0.5 * (a[0] + b[0]),
                            (0.5 * (a[1] + b[2]), 0.5 * (a[2] + b[1])),
                            (0.5 * (a[3] + b[4]), 0.5 * (a[4] + b[3])),
                            0.5 * (a[5] + b[5]), False, pair)


def _oriented_fit(x, y):
    """(dphi, xc, yc, ax, ay, rms) of the curve fit, or None for line-like data."""
    # condition the conic fit with standardised coordinates
    mx, my, sx, sy = x.mean(), y.mean(), x.std(), y.std()
    xc, yc, ex, ey, cosd = _conic_frame((x - mx) / sx, (y - my) / sy)
    xc, yc, ex, ey = mx + sx * xc, my + sy * yc, sx * ex, sy * ey
    u, v = (x - xc) / ex, (y - yc) / ey

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularJacobianWarning)
        # samples near the tips of thin ellipses make the phases ill
        # conditioned; the chi2 crawl there moves dphi by < 1e-6
        try:
            fit = least_squares(_curve_problem(u, v, math.acos(cosd)), ftol=1e-9,
                                max_iter=600)
        except NotConverged:
            return None
    u0, v0, c, dphi = fit.values[:4]
    rms = float(np.sqrt(fit.chi2 / u.size))
    minor = c * math.sqrt(max(1.0 - abs(math.cos(dphi)), 0.0))
    # a real ellipse sits near the conic frame (c ~ 1, center ~ 0); line-like
    # data instead drive the fit towards a huge open ellipse
    runaway = not 0.5 < c < 2.0 or math.hypot(u0, v0) > 0.5
    if runaway or minor < 2.0 * rms:
        return None
    return (float(dphi), float(xc + ex * u0), float(yc + ey * v0), float(c * ex),
            float(c * ey), rms)


def pairwise_phases(data: InterferogramSet, reference_peak: int = 3) -> list[EllipseFitResult]:
    """Fit every peak against ``reference_peak`` (0-based; default the fourth).

    Results are ordered by peak index and skip the reference itself; each
    carries ``pair = (peak, reference_peak)``.
    """
    if not 0 <= reference_peak < data.n_peaks:
        raise IndexError(f"reference_peak {reference_peak} outside 0..{data.n_peaks - 1}")
    ref = data.areas[:, reference_peak]
    return [fit_ellipse(data.areas[:, i], ref, pair=(i, reference_peak))
            for i in range(data.n_peaks) if i != reference_peak]
