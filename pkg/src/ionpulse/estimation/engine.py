"""Bounded Levenberg-Marquardt least squares with shared parameters.

A :class:`FitProblem` binds a model (parameter vector -> one prediction array
per dataset) to observed data with per-point weights. :func:`least_squares`
minimises the weighted squared residuals inside box bounds and reports a
covariance from central-difference Jacobians scaled by the reduced chi-square.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from ..errors import NotConverged, SingularJacobianWarning


@dataclass
class Parameter:
    name: str
    value: float
    lower: float = -math.inf
    upper: float = math.inf


@dataclass
class Dataset:
    inputs: Any
    observed: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.observed = np.asarray(self.observed, float).ravel()
        if self.weights is None:
            self.weights = np.ones_like(self.observed)
        self.weights = np.broadcast_to(np.asarray(self.weights, float).ravel(),
                                       self.observed.shape).copy()
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and > 0")


@dataclass
class FitProblem:
    """Model-to-data binding.

    ``model(x)`` must return one prediction array per dataset, in order, each
    matching that dataset's ``observed`` length. The optional ``jacobian(x)``
    returns the matching derivative blocks, shape ``(n_i, n_params)``; without
    it derivatives are taken by central differences.
    """

    model: Callable[[np.ndarray], Sequence[np.ndarray]]
    params: list[Parameter]
    datasets: list[Dataset]
    jacobian: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None

    def __post_init__(self):
        for p in self.params:
            if not p.lower <= p.value <= p.upper:
                raise ValueError(f"initial value of {p.name} outside its bounds")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def x0(self) -> np.ndarray:
        return np.array([p.value for p in self.params], float)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([p.lower for p in self.params], float),
                np.array([p.upper for p in self.params], float))

    @property
    def n_obs(self) -> int:
        return sum(d.observed.size for d in self.datasets)

    def with_start(self, values) -> "FitProblem":
        params = [Parameter(p.name, float(v), p.lower, p.upper)
                  for p, v in zip(self.params, values)]
        return FitProblem(self.model, params, self.datasets, self.jacobian)

    def residual_map(self, x) -> np.ndarray:
        preds = self.model(np.asarray(x, float))
        if len(preds) != len(self.datasets):
            raise ValueError("model returned the wrong number of prediction arrays")
        out = []
        for pred, d in zip(preds, self.datasets):
            pred = np.asarray(pred, float).ravel()
            if pred.shape != d.observed.shape:
                raise ValueError("prediction length does not match the dataset")
            out.append(np.sqrt(d.weights) * (pred - d.observed))
        return np.concatenate(out) if out else np.zeros(0)

    def jacobian_map(self, x) -> np.ndarray:
        """Weighted analytic Jacobian of :meth:`residual_map`."""
        blocks = self.jacobian(np.asarray(x, float))
        return np.vstack([np.sqrt(d.weights)[:, None] * np.asarray(b, float).reshape(-1, x.size)
                          for b, d in zip(blocks, self.datasets)])


@dataclass
class FitResult:
    names: list[str]
    values: np.ndarray
    std_errors: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    iterations: int
    gradient_norm: float = 0.0
    degenerate: bool = False
    message: str = ""
    info: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    def summary(self) -> dict:
        """Plain-Python record for serialisation."""
        return {
            "parameters": {n: {"value": float(v), "std_error": float(e)}
                           for n, v, e in zip(self.names, self.values, self.std_errors)},
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "degenerate": bool(self.degenerate),
            "message": self.message,
        }


def _jacobian(problem, x, r0, lo, hi, rel_step):
    if problem.jacobian is not None:
        return problem.jacobian_map(x)
    fun = problem.residual_map
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        up, dn = x[i] + h, x[i] - h
        xp, xm = x.copy(), x.copy()
        if up <= hi[i] and dn >= lo[i]:
            xp[i], xm[i] = up, dn
            jac[:, i] = (fun(xp) - fun(xm)) / (2.0 * h)
        elif up <= hi[i]:
            xp[i] = up
            jac[:, i] = (fun(xp) - r0) / h
        else:
            xm[i] = dn
            jac[:, i] = (r0 - fun(xm)) / h
    return jac


def _projected_gradient(g, x, lo, hi):
    pg = g.copy()
    # a bound is active when descent (-g) would push through it
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def covariance_from_jacobian(jac, chi2, dof):
    """Reduced-chi-square scaled (J^T J)^-1 and a rank-deficiency flag."""
    a = jac.T @ jac
    evals, evecs = np.linalg.eigh(a)
    top = max(evals.max(initial=0.0), 0.0)
    degenerate = top == 0.0 or evals.min() <= 1e-13 * top
    if degenerate:
        keep = evals > 1e-13 * top
        inv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
    else:
        inv = (evecs / evals) @ evecs.T
    scale = chi2 / dof if dof > 0 else 1.0
    cov = 0.5 * (inv + inv.T) * scale
    return cov, degenerate


def least_squares(problem: FitProblem, *, max_iter: int = 500, ftol: float = 1e-12,
                  xtol: float = 1e-10, gtol: float = 1e-10,
                  rel_step: float = 1e-6) -> FitResult:
    """Minimise the weighted squared residuals of ``problem`` within its bounds.

    Levenberg-Marquardt with Marquardt's diagonal scaling; trial points are
    clipped into the box. Raises :class:`NotConverged` (with the last iterate
    attached) after ``max_iter`` iterations. A rank-deficient J^T W J gives a
    pseudo-inverse covariance, ``degenerate=True`` and a
    :class:`SingularJacobianWarning`.
    """
    lo, hi = problem.bounds
    fun = problem.residual_map
    x = np.clip(problem.x0, lo, hi)
    r = fun(x)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals are not finite at the initial point")
    chi2 = float(r @ r)
    lam = 1e-3
    converged, message = False, ""
    gnorm = math.inf
    it = 0
    tiny = 1e-30 * max(r.size, 1)

    for it in range(1, max_iter + 1):
        jac = _jacobian(problem, x, r, lo, hi, rel_step)
        g = jac.T @ r
        gnorm = float(np.max(np.abs(_projected_gradient(g, x, lo, hi)), initial=0.0))
        if gnorm <= gtol * max(1.0, chi2) or chi2 <= tiny:
            converged, message = True, "gradient below tolerance"
            break
        a = jac.T @ jac
        diag = np.maximum(np.diag(a), 1e-12 * max(np.diag(a).max(), 1e-300))
        while True:
            try:
                dx = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(a + lam * np.diag(diag), -g, rcond=None)[0]
            x_new = np.clip(x + dx, lo, hi)
            r_new = fun(x_new)
            chi2_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if chi2_new < chi2:
                break
            lam *= 10.0
            if lam > 1e16:
                break
        if lam > 1e16:
            converged, message = True, "no further decrease possible"
            break
        step = np.abs(x_new - x)
        drop = chi2 - chi2_new
        x, r, chi2 = x_new, r_new, chi2_new
        lam = max(lam * 0.3, 1e-15)
        if chi2 <= tiny:
            converged, message = True, "exact fit"
            break
        if drop <= ftol * chi2:
            converged, message = True, "relative reduction below tolerance"
            break
        if np.all(step <= xtol * (np.abs(x) + xtol)):
            converged, message = True, "step below tolerance"
            break

    jac = _jacobian(problem, x, r, lo, hi, rel_step)
    gnorm = float(np.max(np.abs(_projected_gradient(jac.T @ r, x, lo, hi)), initial=0.0))
    dof = r.size - x.size
    cov, degenerate = covariance_from_jacobian(jac, chi2, dof)
    if degenerate:
        warnings.warn("J^T W J is rank deficient; covariance is a pseudo-inverse",
                      SingularJacobianWarning, stacklevel=2)
    result = FitResult(problem.names, x, np.sqrt(np.clip(np.diag(cov), 0.0, None)), cov,
                       chi2, dof, converged, it, gnorm, degenerate, message)
    if not converged:
        result.message = f"iteration limit {max_iter} reached"
        raise NotConverged(result.message, result)
    return result


def multistart(problem: FitProblem, starts: Iterable[Sequence[float]], *,
               tie_break: str | None = "theta", rtol: float = 1e-9,
               atol: float = 1e-18, **kwargs) -> FitResult:
    """Run :func:`least_squares` from several starts and keep the best chi2.

    Results within ``rtol`` (relative) or ``atol`` (absolute, for exact fits
    at rounding level) of the best chi2 are treated as ties and the one with
    the smallest ``tie_break`` parameter wins.
    """
    results = []
    for start in starts:
        start = np.clip(np.asarray(start, float), *problem.bounds)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingularJacobianWarning)
            try:
                results.append(least_squares(problem.with_start(start), **kwargs))
            except NotConverged:
                continue
    if not results:
        raise NotConverged("no start converged")
    best_chi2 = min(r.chi2 for r in results)
    ties = [r for r in results if r.chi2 <= best_chi2 * (1.0 + rtol) + atol]
    if tie_break in problem.names:
        best = min(ties, key=lambda r: r[tie_break])
    else:
        best = min(ties, key=lambda r: r.chi2)
    if best.degenerate:
        warnings.warn("J^T W J is rank deficient; covariance is a pseudo-inverse",
                      SingularJacobianWarning, stacklevel=2)
    best.info["starts"] = len(results)
    return best
