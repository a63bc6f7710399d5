"""Simulate a many-pulse detuning scan with shot noise and fit theta back.

Usage: python demos/dark_state_fit.py [rate_ghz] [theta_pi]
"""
import math
import sys

from ionpulse.estimation import ScanSubset, fit_many_pulse_scan
from ionpulse.experiments import dark_state_curves, default_detuning_grid, synth_shots
from ionpulse.quantum_core import AtomModel


def main(rate=1.25, theta_pi=0.345, seed=0):
    counts = [500, 1000, 2000, 5000]
    det = default_detuning_grid(rate)
    truth = dark_state_curves(theta_pi * math.pi, 1 / rate, AtomModel(), det, counts)
    obs = synth_shots(truth, 100, seed) / 100
    result = fit_many_pulse_scan(
        [ScanSubset(det, n, obs[:, k], 100) for k, n in enumerate(counts)], rate)
    print(f"rate {rate} GHz, true theta {theta_pi:.3f} pi")
    print(f"fitted theta {result['theta'] / math.pi:.4f} "
          f"+- {result.error('theta') / math.pi:.4f} pi")
    print(f"detuning offset {result['detuning_offset']:+.4f} rad/ns")
    for k, n in enumerate(counts):
        print(f"  n = {n:5d}: peak P_D {truth[:, k].max():.3f}")


if __name__ == "__main__":
    args = [float(a) for a in sys.argv[1:3]]
    main(*args)
