"""Ramsey contrast and phase against the number of injected pulses."""
import math

import numpy as np

from ionpulse.experiments import contrast_phase_arrays, ramsey_states
from ionpulse.quantum_core import AtomModel, TrainParams


def main(theta_pi=0.377, rate=1.25, n_max=20):
    params = TrainParams.from_rep_rate(theta_pi * math.pi, rate)
    ns = np.arange(n_max + 1)
    contrast, phase = contrast_phase_arrays(ramsey_states(params, AtomModel(), ns))
    print(" n  contrast  phase/pi")
    for n, c, p in zip(ns, contrast, phase):
        print(f"{n:2d}  {c:8.4f}  {p / math.pi:+8.4f}")


if __name__ == "__main__":
    main()
