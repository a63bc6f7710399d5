"""Least-squares engine and the protocol fits built on it."""
from .engine import (Dataset, FitProblem, FitResult, Parameter, covariance_from_jacobian,
                     least_squares, multistart)
from .protocols import (BurstMapData, FringeFit, RamseyData, ScanSubset, binomial_variance,
                        fit_fringes, fit_many_pulse_scan, fit_pi_scan, fit_ramsey,
                        fit_single_pulse_map, ramsey_model, wrap_angle)

__all__ = [
    "Dataset", "FitProblem", "FitResult", "Parameter", "covariance_from_jacobian",
    "least_squares", "multistart", "BurstMapData", "FringeFit", "RamseyData",
    "ScanSubset", "binomial_variance", "fit_fringes", "fit_many_pulse_scan",
    "fit_pi_scan", "fit_ramsey", "fit_single_pulse_map",
    "ramsey_model", "wrap_angle",
]
